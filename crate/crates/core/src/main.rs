fn main() {
    std::process::exit(detsched::cli::run(std::env::args_os()));
}
