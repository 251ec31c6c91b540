use std::fs;
use std::path::Path;
use std::process::Command;

fn detsched(args: &[&str], out: &Path) -> (i32, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_detsched"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap();
    (o.status.code().unwrap(), String::from_utf8_lossy(&o.stdout).into_owned())
}

#[test]
fn infeasible_budget_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = detsched(&["solve", "--config", "paper_iv", "--dth", "0.01"], dir.path());
    assert_eq!(code, 2);
    assert!(dir.path().join("manifest.toml").exists());
}

#[test]
fn unknown_flag_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(detsched(&["solve", "--nope"], dir.path()).0, 1);
    assert_eq!(detsched(&["frobnicate"], dir.path()).0, 1);
    let missing = dir.path().join("missing.csv");
    assert_eq!(detsched(&["simulate", "--policy", missing.to_str().unwrap()], dir.path()).0, 1);
}

#[test]
fn bad_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "Q = 10\nS_max = 2\nxi_kind = \"exp2minus1\"\n[arrival]\nalphas = [0.5, 0.6]\n\
         [channel]\nkind = \"uniform\"\nh_min = 0.5\nh_max = 10.0\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_detsched"))
        .args(["solve", "--dth", "2", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("arrival.alphas"));
}

#[test]
fn sweep_writes_one_curve_per_bin_count() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = detsched(&["sweep", "--config", "paper_iv", "--bins-list", "2,4,8,16", "--dgrid", "1:4:7"], dir.path());
    assert_eq!(code, 0);
    for m in [2, 4, 8, 16] {
        let text = fs::read_to_string(dir.path().join(format!("curve_M{m}.csv"))).unwrap();
        assert!(text.starts_with("M,D_th,P\n"));
        assert_eq!(text.lines().count(), 8);
    }
}

#[test]
fn solve_then_simulate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = detsched(&["solve", "--bins", "4", "--dth", "2.5"], &dir.path().join("s"));
    assert_eq!(code, 0);
    assert!(out.contains("status=Optimal"));
    let pol = dir.path().join("s/policy.csv");
    let (code, out) = detsched(
        &["simulate", "--policy", pol.to_str().unwrap(), "--slots", "20000", "--trace"],
        &dir.path().join("m"),
    );
    assert_eq!(code, 0);
    assert!(out.contains("drops=0"));
    let trace = fs::read_to_string(dir.path().join("m/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 20_001);
}

#[test]
fn construct_and_vertices_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = detsched(&["construct", "--bins", "4", "--dth", "3", "--M", "8"], &dir.path().join("c"));
    assert_eq!(code, 0, "{out}");
    assert!(fs::read_to_string(dir.path().join("c/thresholds.csv")).unwrap().starts_with("q,h_lo,h_hi,s\n"));
    let (code, _) = detsched(&["vertices", "--bins", "2"], &dir.path().join("v"));
    assert_eq!(code, 0);
    let v = fs::read_to_string(dir.path().join("v/vertices.csv")).unwrap();
    assert!(v.starts_with("M,D,P,policy_id\n"));
    let first = v.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    assert!(dir.path().join("v").join(first).exists());
    assert!(fs::read_to_string(dir.path().join("v/distances.csv")).unwrap().starts_with("M,pair_index,euclidean,delay_axis\n"));
}

#[test]
fn verify_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = detsched(&["verify", "--config", "paper_iv"], dir.path());
    assert_eq!(code, 0, "{out}");
    assert!(out.lines().count() >= 12);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_detsched"))
        .args(["solve", "--bins", "2", "--dth", "2"])
        .env("DETSCHED_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("metrics.txt").exists());
}
