//! Command-line front end.
//!
//! Every command writes its outputs plus a `manifest.toml` into one
//! directory: `--out`, else `$DETSCHED_OUT`, else `./detsched-out`.
//! `detsched rerun <manifest>` repeats a recorded run.
//!
//! Exit codes: 0 success, 1 usage error, 2 infeasible, 3 solver anomaly,
//! 4 verification failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::certify::{render_table, run_battery, BatteryOptions};
use crate::config::{config_to_toml, load_config, ConfigError};
use crate::construction::{
    construct_ym, power_ratio, verify_deterministic, verify_feasibility, ym_to_policy, ConstructionError,
    PiecewiseDensity, DEFAULT_SAMPLES,
};
use crate::io::{
    float17, measure_csv, parse_policy, policy_csv, threshold_csv, write_atomic, IoError, PolicyFile,
};
use crate::model::{discretize_channel, SystemConfig};
use crate::occupancy::{evaluate_measure, extract_policy, min_delay, solve_constrained, OccupancyError};
use crate::simplex::LpStatus;
use crate::simulator::{run_sim, run_sim_traced, SimError, SimOptions, SimReport};
use crate::sweep::{
    convergence_study, curve_csv, default_grid, default_lambda_max, distances_csv, enumerate_vertices, max_distances,
    policy_id, uniform_grid, vertex_distances, vertices_csv, SweepError, TradeoffCurve, VERTEX_TOL,
};

pub const OUT_ENV: &str = "DETSCHED_OUT";
pub const DEFAULT_OUT: &str = "detsched-out";
pub const MANIFEST: &str = "manifest.toml";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "detsched", version, about = "Minimum-power scheduling under a delay budget")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
struct Common {
    /// `paper_iv` or a TOML file.
    #[arg(long, default_value = "paper_iv")]
    config: String,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one constrained program.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long)]
        dth: f64,
    },
    /// Tradeoff curves for several bin counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        bins_list: Vec<usize>,
        /// `lo:hi:n`, or a comma-separated list; defaults to 60 points from
        /// the least delay to three times it.
        #[arg(long)]
        dgrid: Option<String>,
    },
    /// Corners of the tradeoff curve and their spacing.
    Vertices {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long)]
        lambda_max: Option<f64>,
    },
    /// Build and check a deterministic threshold policy.
    Construct {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long)]
        dth: f64,
        /// Number of cells.
        #[arg(long = "M")]
        cells: usize,
    },
    /// Monte Carlo run of a stored policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        slots: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        warmup: Option<u64>,
        /// Also write the per-slot trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run the self-check battery.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        bins: usize,
        #[arg(long, default_value_t = 3.0)]
        dth: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        /// Output directory; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    pub parameters: BTreeMap<String, String>,
    pub out_dir: String,
    pub tool_version: String,
    /// Seconds since the epoch; `SOURCE_DATE_EPOCH` when set.
    pub timestamp: u64,
    /// Arguments that reproduce the run.
    pub argv: Vec<String>,
    pub system: String,
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Infeasible(String),
    Solver(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
            Failure::Solver(_) => EXIT_SOLVER,
            Failure::Verify(_) => EXIT_VERIFY,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Infeasible(m) | Failure::Solver(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<OccupancyError> for Failure {
    fn from(e: OccupancyError) -> Self {
        match e {
            OccupancyError::NotOptimal(LpStatus::Infeasible) => Failure::Infeasible(e.to_string()),
            OccupancyError::Model(_)
            | OccupancyError::NonPositiveBound(_)
            | OccupancyError::NegativeWeight(_)
            | OccupancyError::PolicyShape(_) => Failure::Usage(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Occupancy(o) => o.into(),
            SweepError::EmptyCurve => Failure::Infeasible(e.to_string()),
            SweepError::NotDeterministic { .. } => Failure::Verify(e.to_string()),
            SweepError::LambdaTooSmall { .. } | SweepError::UnsortedBins | SweepError::UnsortedGrid => {
                Failure::Usage(e.to_string())
            }
        }
    }
}

impl From<ConstructionError> for Failure {
    fn from(e: ConstructionError) -> Self {
        match e {
            ConstructionError::ZeroCells => Failure::Usage(e.to_string()),
            ConstructionError::NotDeterministic(_) => Failure::Verify(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        Failure::Usage(e.to_string())
    }
}

struct Output {
    dir: PathBuf,
}

impl Output {
    fn write(&self, name: &str, text: &str) -> Result<(), Failure> {
        write_atomic(&self.dir.join(name), text.as_bytes()).map_err(|e| Failure::Usage(e.to_string()))
    }
}

fn resolve_out(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Runs the tool on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, argv) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cmd: Command, argv: Vec<String>) -> Result<(), Failure> {
    match cmd {
        Command::Rerun { manifest, out } => rerun(&manifest, out),
        other => execute(other, argv),
    }
}

fn rerun(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let m: RunManifest = toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut argv = vec!["detsched".to_string()];
    argv.extend(m.argv.iter().cloned());
    let out = out.unwrap_or_else(|| PathBuf::from(&m.out_dir));
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| Failure::Usage(e.to_string()))?;
    if matches!(cli.command, Command::Rerun { .. }) {
        return Err(Failure::Usage("a manifest cannot record a rerun".into()));
    }
    execute(cli.command, m.argv)
}

/// Drops any `--out` from recorded arguments so reruns can redirect output.
fn strip_out(argv: Vec<String>) -> Vec<String> {
    let mut kept = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            kept.push(a);
        }
    }
    kept
}

fn start(
    command: &str,
    common: &Common,
    argv: Vec<String>,
    params: &[(&str, String)],
) -> Result<(SystemConfig, Output), Failure> {
    let cfg = load_config(&common.config)?;
    let dir = resolve_out(common.out.clone());
    fs::create_dir_all(&dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let manifest = RunManifest {
        command: command.into(),
        config: common.config.clone(),
        parameters: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        out_dir: dir.to_string_lossy().into_owned(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: timestamp(),
        argv: strip_out(argv),
        system: config_to_toml(&cfg),
    };
    let out = Output { dir };
    out.write(MANIFEST, &toml::to_string(&manifest).expect("manifest serializes"))?;
    Ok((cfg, out))
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("bad --dgrid {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() == 3 {
        let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if !(lo <= hi) || n == 0 {
            return Err(bad());
        }
        return Ok(uniform_grid(lo, hi, n));
    }
    spec.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn execute(cmd: Command, argv: Vec<String>) -> Result<(), Failure> {
    match cmd {
        Command::Solve { common, bins, dth } => {
            let (cfg, out) = start("solve", &common, argv, &[("bins", bins.to_string()), ("dth", float17(dth))])?;
            let disc = discretize_channel(&cfg.channel, bins).map_err(OccupancyError::from)?;
            let sol = solve_constrained(&cfg, &disc, dth)?;
            let mut metrics = format!("status={:?}\n", sol.status);
            match sol.status {
                LpStatus::Optimal => {}
                LpStatus::Infeasible => {
                    out.write("metrics.txt", &metrics)?;
                    let d_min = min_delay(&cfg, &disc)?;
                    return Err(Failure::Infeasible(format!(
                        "delay budget {dth} is below the least achievable delay {}",
                        float17(d_min)
                    )));
                }
                LpStatus::Unbounded => {
                    out.write("metrics.txt", &metrics)?;
                    return Err(Failure::Solver("program reported unbounded".into()));
                }
            }
            if sol.max_violation > 1e-6 {
                return Err(Failure::Solver(format!("constraint violation {}", sol.max_violation)));
            }
            let m = sol.measure.as_ref().expect("optimal");
            let e = evaluate_measure(m);
            let pol = extract_policy(m);
            metrics.push_str(&format!(
                "objective={}\ndelay={}\npower={}\ndelay_dual={}\nmax_violation={}\npolicy={:?}\n",
                float17(sol.objective),
                float17(e.delay),
                float17(e.power),
                float17(sol.delay_dual.unwrap_or(0.0)),
                float17(sol.max_violation),
                pol.kind()
            ));
            out.write("measure.csv", &measure_csv(m))?;
            out.write("policy.csv", &policy_csv(&pol))?;
            out.write("metrics.txt", &metrics)?;
            print!("{metrics}");
            Ok(())
        }
        Command::Sweep {
            common,
            bins_list,
            dgrid,
        } => {
            let bins_text = bins_list.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",");
            let (cfg, out) = start(
                "sweep",
                &common,
                argv,
                &[("bins_list", bins_text), ("dgrid", dgrid.clone().unwrap_or_else(|| "default".into()))],
            )?;
            let grid = match dgrid {
                Some(g) => parse_grid(&g)?,
                None => {
                    let coarse = *bins_list.first().ok_or_else(|| Failure::Usage("empty --bins-list".into()))?;
                    let disc = discretize_channel(&cfg.channel, coarse).map_err(OccupancyError::from)?;
                    default_grid(min_delay(&cfg, &disc)?)
                }
            };
            let study = convergence_study(&cfg, &bins_list, &grid)?;
            let mut summary = String::new();
            let mut bad = Vec::new();
            for c in &study.curves {
                out.write(&format!("curve_M{}.csv", c.bins), &curve_csv(std::slice::from_ref(c)))?;
                let shape = c.shape();
                summary.push_str(&format!(
                    "M={} points={} monotonicity={} convexity={}\n",
                    c.bins,
                    c.points.len(),
                    float17(shape.monotonicity),
                    float17(shape.convexity)
                ));
                for n in &c.notes {
                    summary.push_str(&format!("M={} skipped {n}\n", c.bins));
                }
                if !shape.ok() {
                    bad.push(format!("M = {} curve shape", c.bins));
                }
            }
            for (a, b, g) in &study.sup_gaps {
                summary.push_str(&format!("sup_gap M={a}->M={b} {}\n", float17(*g)));
            }
            for v in &study.violations {
                summary.push_str(&format!(
                    "dominance_violation M={} over M={} at D_th={} by {}\n",
                    v.fine,
                    v.coarse,
                    float17(v.d_th),
                    float17(v.excess)
                ));
                bad.push(format!("dominance M = {} over M = {}", v.fine, v.coarse));
            }
            out.write("curves.csv", &curve_csv(&study.curves))?;
            out.write("summary.txt", &summary)?;
            print!("{summary}");
            if bad.is_empty() {
                Ok(())
            } else {
                Err(Failure::Verify(bad.join("; ")))
            }
        }
        Command::Vertices {
            common,
            bins,
            lambda_max,
        } => {
            let cfg0 = load_config(&common.config)?;
            let lambda_max = lambda_max.unwrap_or_else(|| default_lambda_max(&cfg0));
            let (cfg, out) =
                start("vertices", &common, argv, &[("bins", bins.to_string()), ("lambda_max", float17(lambda_max))])?;
            let disc = discretize_channel(&cfg.channel, bins).map_err(OccupancyError::from)?;
            let vertices = enumerate_vertices(&cfg, &disc, lambda_max, VERTEX_TOL)?;
            let pts: Vec<(f64, f64)> = vertices.iter().map(|v| (v.delay, v.power)).collect();
            let curve = TradeoffCurve {
                bins,
                points: Vec::new(),
                notes: Vec::new(),
                distances: vertex_distances(&pts),
                vertices,
            };
            let curves = [curve];
            out.write("vertices.csv", &vertices_csv(&curves))?;
            out.write("distances.csv", &distances_csv(&curves))?;
            for (i, v) in curves[0].vertices.iter().enumerate() {
                out.write(&policy_id(bins, i), &policy_csv(&v.policy))?;
            }
            let (e, a) = max_distances(&curves[0].distances);
            println!(
                "M={bins} vertices={} max_euclidean={} max_delay_axis={}",
                curves[0].vertices.len(),
                float17(e),
                float17(a)
            );
            Ok(())
        }
        Command::Construct {
            common,
            bins,
            dth,
            cells,
        } => {
            let (cfg, out) = start(
                "construct",
                &common,
                argv,
                &[("bins", bins.to_string()), ("dth", float17(dth)), ("M", cells.to_string())],
            )?;
            let disc = discretize_channel(&cfg.channel, bins).map_err(OccupancyError::from)?;
            let sol = solve_constrained(&cfg, &disc, dth)?;
            if sol.status == LpStatus::Infeasible {
                return Err(Failure::Infeasible(format!("delay budget {dth} is infeasible")));
            }
            let m = sol.into_measure()?;
            let d = PiecewiseDensity::from_measure(&m);
            let y = construct_ym(&d, cells)?;
            let feas = verify_feasibility(&y);
            let det = verify_deterministic(&y, DEFAULT_SAMPLES);
            let overlap = y.overlap_witness();
            let ratio = power_ratio(&y, &d);
            let mut report = feas.to_key_values();
            report.push_str(&format!(
                "deterministic={}\nexact_overlap={}\npartition_defect={}\npower_constructed={}\npower_source={}\n\
                 ratio={}\nratio_bound={}\nwithin_bound={}\nratio_at_least_one={}\n",
                det.deterministic,
                overlap.is_some(),
                float17(y.partition_defect()),
                float17(ratio.constructed),
                float17(ratio.source),
                float17(ratio.ratio),
                float17(ratio.bound),
                ratio.within_upper_bound(),
                ratio.at_least_one()
            ));
            out.write("verification.txt", &report)?;
            print!("{report}");
            let policy = ym_to_policy(&y)?;
            out.write("thresholds.csv", &threshold_csv(&policy))?;
            let ok = feas.max_constraint_residual() <= 1e-8
                && feas.rate_preservation <= 1e-10
                && det.deterministic
                && overlap.is_none()
                && ratio.within_upper_bound();
            if ok {
                Ok(())
            } else {
                Err(Failure::Verify("construction checks failed; see verification.txt".into()))
            }
        }
        Command::Simulate {
            common,
            policy,
            slots,
            seed,
            warmup,
            trace,
        } => {
            let (cfg, out) = start(
                "simulate",
                &common,
                argv,
                &[
                    ("policy", policy.to_string_lossy().into_owned()),
                    ("slots", slots.to_string()),
                    ("seed", seed.to_string()),
                    ("warmup", warmup.map_or("default".into(), |w| w.to_string())),
                    ("trace", trace.to_string()),
                ],
            )?;
            let text = fs::read_to_string(&policy).map_err(|e| Failure::Usage(format!("{}: {e}", policy.display())))?;
            let pol = parse_policy(&cfg, &text)?;
            let opts = SimOptions { slots, warmup, seed };
            let report: SimReport = if trace {
                let mut buf: Vec<u8> = Vec::new();
                let r = match &pol {
                    PolicyFile::Binned(p) => run_sim_traced(&cfg, p, opts, Some(&mut buf))?,
                    PolicyFile::Threshold(p) => run_sim_traced(&cfg, p, opts, Some(&mut buf))?,
                };
                write_atomic(&out.dir.join("trace.csv"), &buf)?;
                r
            } else {
                match &pol {
                    PolicyFile::Binned(p) => run_sim(&cfg, p, opts)?,
                    PolicyFile::Threshold(p) => run_sim(&cfg, p, opts)?,
                }
            };
            out.write("report.txt", &report.to_key_values())?;
            out.write("report.csv", &format!("{}\n{}\n", SimReport::csv_header(), report.to_csv_row()))?;
            print!("{}", report.to_key_values());
            Ok(())
        }
        Command::Verify {
            common,
            bins,
            dth,
            seed,
        } => {
            let (cfg, out) = start(
                "verify",
                &common,
                argv,
                &[("bins", bins.to_string()), ("dth", float17(dth)), ("seed", seed.to_string())],
            )?;
            let opts = BatteryOptions {
                bins,
                d_th: dth,
                seed,
                ..BatteryOptions::default()
            };
            let rows = run_battery(&cfg, &opts);
            let table = render_table(&rows);
            out.write("verify.txt", &table)?;
            print!("{table}");
            let failed: Vec<&str> = rows.iter().filter(|r| !r.passed).map(|r| r.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Verify(format!("failed: {}", failed.join(", "))))
            }
        }
        Command::Rerun { .. } => unreachable!("handled by dispatch"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("1:3:3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_grid("1.5, 2").unwrap(), vec![1.5, 2.0]);
        assert!(parse_grid("3:1:4").is_err());
        assert!(parse_grid("x").is_err());
    }

    #[test]
    fn out_flag_is_stripped() {
        let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(strip_out(v(&["solve", "--out", "a", "--dth", "2"])), v(&["solve", "--dth", "2"]));
        assert_eq!(strip_out(v(&["solve", "--out=a"])), v(&["solve"]));
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["detsched", "solve", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["detsched"]), EXIT_USAGE);
        assert_eq!(run(["detsched", "solve", "--dth", "2", "--config", "/no/such.toml"]), EXIT_USAGE);
    }
}
