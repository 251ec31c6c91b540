//! Self-check battery behind `detsched verify`.
//!
//! Each check solves or constructs something on the given system and
//! compares it against an independent computation or a structural
//! property. Rows are returned in a fixed order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::construction::{
    construct_ym, power_ratio, verify_deterministic, verify_feasibility, ym_to_policy, PiecewiseDensity,
    DEFAULT_SAMPLES,
};
use crate::io::float17;
use crate::model::{discretize_channel, ArrivalModel, ChannelDiscretization, ChannelModel, SystemConfig};
use crate::occupancy::{
    evaluate_measure, extract_policy, policy_to_measure, solve_constrained, solve_lagrangian, LpSolution,
    OccupancyError, Policy, PolicyKind,
};
use crate::simplex::{self, LinearProgram, LpStatus, RowKind};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatteryOptions {
    pub bins: usize,
    pub d_th: f64,
    pub cells: Vec<usize>,
    pub seed: u64,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            bins: 16,
            d_th: 3.0,
            cells: vec![1, 2, 4, 8, 16, 32, 64, 380],
            seed: 1,
        }
    }
}

fn row(name: &'static str, passed: bool, detail: String) -> CheckRow {
    CheckRow { name, passed, detail }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> CheckRow {
    row(name, false, format!("error: {e}"))
}

/// Renders rows as an aligned text table.
pub fn render_table(rows: &[CheckRow]) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for r in rows {
        let mark = if r.passed { "PASS" } else { "FAIL" };
        out.push_str(&format!("{mark}  {:width$}  {}\n", r.name, r.detail));
    }
    out
}

fn optimum(cfg: &SystemConfig, disc: &ChannelDiscretization, d_th: f64) -> Result<LpSolution, OccupancyError> {
    let sol = solve_constrained(cfg, disc, d_th)?;
    if sol.status != LpStatus::Optimal {
        return Err(OccupancyError::NotOptimal(sol.status));
    }
    Ok(sol)
}

/// Runs every check; never panics on solver trouble, reporting it as a
/// failed row instead.
pub fn run_battery(cfg: &SystemConfig, opts: &BatteryOptions) -> Vec<CheckRow> {
    let mut rows = Vec::new();
    let disc = match discretize_channel(&cfg.channel, opts.bins) {
        Ok(d) => d,
        Err(e) => return vec![failed("discretization", e)],
    };
    let sol = match optimum(cfg, &disc, opts.d_th) {
        Ok(s) => s,
        Err(e) => return vec![failed("lp_optimum", e)],
    };
    let p_star = sol.objective;
    let dual = sol.delay_dual.unwrap_or(0.0);
    let measure = sol.measure.clone().expect("optimal solution carries a measure");

    let residual = measure.max_residual().max(sol.max_violation);
    rows.push(row(
        "lp_feasible",
        residual <= 1e-8,
        format!("P* = {}, max residual {}", float17(p_star), float17(residual)),
    ));

    let metrics = evaluate_measure(&measure);
    rows.push(row(
        "lp_objective_is_power",
        (metrics.power - p_star).abs() <= 1e-8 && metrics.delay <= opts.d_th + 1e-8,
        format!("power {} delay {}", float17(metrics.power), float17(metrics.delay)),
    ));

    rows.push(match solve_lagrangian(cfg, &disc, dual) {
        Ok(l) => {
            let gap = (l.value() - (p_star + dual * opts.d_th)).abs();
            row(
                "strong_duality",
                gap <= 1e-8,
                format!("lambda = {}, gap {}", float17(dual), float17(gap)),
            )
        }
        Err(e) => failed("strong_duality", e),
    });

    let policy = extract_policy(&measure);
    rows.push(match policy_to_measure(cfg, &disc, &policy) {
        Ok(back) => {
            let mut worst: f64 = 0.0;
            for q in 0..=cfg.buffer {
                for s in 0..=cfg.max_rate {
                    for k in 0..disc.bins() {
                        worst = worst.max((back.get(q, s, k) - measure.get(q, s, k)).abs());
                    }
                }
            }
            row("policy_round_trip", worst <= 1e-8, format!("max difference {}", float17(worst)))
        }
        Err(e) => failed("policy_round_trip", e),
    });

    rows.push(lagrangian_vertices_deterministic(cfg, &disc));
    rows.push(refinement_dominance(cfg, &disc, opts, p_star));

    let density = PiecewiseDensity::from_measure(&measure);
    rows.extend(construction_checks(&density, opts));

    rows.push(tiny_instance_hull());
    rows.push(simplex_oracle(opts.seed));
    rows
}

fn lagrangian_vertices_deterministic(cfg: &SystemConfig, disc: &ChannelDiscretization) -> CheckRow {
    let name = "weighted_optima_deterministic";
    for lambda in [0.01, 0.1, 1.0, 10.0] {
        match solve_lagrangian(cfg, disc, lambda) {
            Ok(l) if l.policy.kind() == PolicyKind::Deterministic => {}
            Ok(l) => {
                let (q, k, s1, s2) = l.policy.mixed_row().unwrap_or_default();
                return row(
                    name,
                    false,
                    format!("lambda = {lambda}: q = {q}, bin {k} mixes {s1} and {s2}"),
                );
            }
            Err(e) => return failed(name, e),
        }
    }
    row(name, true, "lambda in {0.01, 0.1, 1, 10}".into())
}

fn refinement_dominance(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    opts: &BatteryOptions,
    p_star: f64,
) -> CheckRow {
    let name = "refinement_dominance";
    let coarse = opts.bins / 2;
    if coarse == 0 || opts.bins % 2 != 0 {
        return row(name, true, "skipped: bin count not even".into());
    }
    let res = discretize_channel(&cfg.channel, coarse)
        .map_err(OccupancyError::from)
        .and_then(|d| optimum(cfg, &d, opts.d_th));
    match res {
        Ok(c) => row(
            name,
            p_star <= c.objective + 1e-8,
            format!(
                "P*({}) = {} <= P*({}) = {}",
                disc.bins(),
                float17(p_star),
                coarse,
                float17(c.objective)
            ),
        ),
        Err(e) => failed(name, e),
    }
}

fn construction_checks(d: &PiecewiseDensity, opts: &BatteryOptions) -> Vec<CheckRow> {
    let mut constraint = (true, 0.0f64);
    let mut preservation = (true, 0.0f64);
    let mut deterministic = (true, String::new());
    let mut upper = (true, String::new());
    let mut epsilon = (true, String::from("no cell count reaches the 1.05 bound"));
    let mut policy = (true, String::new());
    for &m in &opts.cells {
        let y = match construct_ym(d, m) {
            Ok(y) => y,
            Err(e) => return vec![failed("construction", e)],
        };
        let f = verify_feasibility(&y);
        constraint.1 = constraint.1.max(f.max_constraint_residual());
        preservation.1 = preservation.1.max(f.rate_preservation);
        let det = verify_deterministic(&y, DEFAULT_SAMPLES);
        if let Some(w) = det.witness.or(y.overlap_witness()) {
            deterministic = (false, format!("M = {m}: q = {} at h = {}", w.q, float17(w.h)));
        }
        let r = power_ratio(&y, d);
        if !r.within_upper_bound() {
            upper = (false, format!("M = {m}: ratio {} > {}", float17(r.ratio), float17(r.bound)));
        }
        if r.bound <= 1.05 + 1e-12 {
            let ok = r.ratio <= 1.05;
            if epsilon.0 {
                epsilon = (ok, format!("M = {m}: ratio {}", float17(r.ratio)));
            }
        }
        if let Err(e) = ym_to_policy(&y) {
            policy = (false, format!("M = {m}: {e}"));
        }
    }
    constraint.0 = constraint.1 <= 1e-8;
    preservation.0 = preservation.1 <= 1e-10;
    let cells = format!("{:?}", opts.cells);
    vec![
        row(
            "construction_feasible",
            constraint.0,
            format!("cells {cells}: max residual {}", float17(constraint.1)),
        ),
        row(
            "rate_mass_preserved",
            preservation.0,
            format!("max difference {}", float17(preservation.1)),
        ),
        row(
            "construction_deterministic",
            deterministic.0,
            if deterministic.0 {
                "sampled and exact interval checks clean".into()
            } else {
                deterministic.1
            },
        ),
        row(
            "power_ratio_bound",
            upper.0,
            if upper.0 {
                "ratio <= 1 + (h_max - h_min) / (M h_min) for all M".into()
            } else {
                upper.1
            },
        ),
        row("epsilon_optimal", epsilon.0, epsilon.1),
        row(
            "threshold_policy",
            policy.0,
            if policy.0 { "read off every construction".into() } else { policy.1 },
        ),
    ]
}

/// Two-state-choice system small enough to enumerate every deterministic
/// policy.
pub fn tiny_config() -> SystemConfig {
    SystemConfig {
        arrival: ArrivalModel::new(vec![0.5, 0.5]),
        channel: ChannelModel::uniform(1.0, 2.0),
        buffer: 2,
        max_rate: 1,
        xi: vec![0.0, 1.0],
    }
}

/// `(D, P)` of every unichain deterministic policy.
pub fn enumerate_deterministic(cfg: &SystemConfig, disc: &ChannelDiscretization) -> Vec<(f64, f64)> {
    let m = disc.bins();
    let choices: Vec<Vec<usize>> = (0..=cfg.buffer)
        .flat_map(|q| (0..m).map(move |_| q))
        .map(|q| (0..=cfg.max_rate).filter(|&s| cfg.admissible(q, s)).collect())
        .collect();
    let mut idx = vec![0usize; choices.len()];
    let mut out = Vec::new();
    loop {
        let pol = Policy::deterministic(cfg, disc, |q, k| choices[q * m + k][idx[q * m + k]]);
        if let Ok(meas) = policy_to_measure(cfg, disc, &pol) {
            let e = evaluate_measure(&meas);
            out.push((e.delay, e.power));
        }
        let mut i = 0;
        loop {
            if i == idx.len() {
                return out;
            }
            idx[i] += 1;
            if idx[i] < choices[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Least power over mixtures of at most two points with delay `<= d`.
pub fn hull_at(points: &[(f64, f64)], d: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut take = |v: f64| best = Some(best.map_or(v, |b: f64| b.min(v)));
    for &(di, pi) in points {
        if di <= d {
            take(pi);
        }
        for &(dj, pj) in points {
            if di < d && d < dj {
                take(pi + (pj - pi) * (d - di) / (dj - di));
            }
        }
    }
    best
}

fn tiny_instance_hull() -> CheckRow {
    let name = "tiny_instance_hull";
    let cfg = tiny_config();
    let mut worst: f64 = 0.0;
    for m in [1, 2] {
        let disc = discretize_channel(&cfg.channel, m).expect("tiny channel");
        let pts = enumerate_deterministic(&cfg, &disc);
        let lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        for i in 0..5 {
            let d = lo + (hi - lo) * i as f64 / 4.0;
            let lp = match optimum(&cfg, &disc, d) {
                Ok(s) => s.objective,
                Err(e) => return failed(name, e),
            };
            let hull = hull_at(&pts, d).expect("budget at or above least delay");
            worst = worst.max((lp - hull).abs());
        }
    }
    row(name, worst <= 1e-8, format!("max |LP - hull| {}", float17(worst)))
}

/// Least objective over all basic feasible solutions of
/// `min c x, A x (<=|=) b, x >= 0`, found by trying every basis.
pub fn brute_force_lp(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let m = lp.rows.len();
    let slack: Vec<usize> = (0..m).filter(|&i| lp.rows[i].kind != RowKind::Eq).collect();
    let cols = n + slack.len();
    let mut a = DMatrix::<f64>::zeros(m, cols);
    let mut b = DVector::<f64>::zeros(m);
    let mut c = vec![0.0; cols];
    c[..n].copy_from_slice(&lp.objective);
    for (i, r) in lp.rows.iter().enumerate() {
        for j in 0..n {
            a[(i, j)] = r.coeffs[j];
        }
        b[i] = r.rhs;
    }
    for (t, &i) in slack.iter().enumerate() {
        a[(i, n + t)] = match lp.rows[i].kind {
            RowKind::Le => 1.0,
            RowKind::Ge => -1.0,
            RowKind::Eq => unreachable!(),
        };
    }
    let rank = a.clone().svd(false, false).rank(1e-9);
    let mut best: Option<f64> = None;
    for basis in subsets(cols, rank) {
        let sub = DMatrix::from_fn(m, rank, |i, j| a[(i, basis[j])]);
        let Some(xb) = sub.clone().svd(true, true).solve(&b, 1e-12).ok() else {
            continue;
        };
        if (&sub * &xb - &b).amax() > 1e-9 || xb.iter().any(|&v| v < -1e-9) {
            continue;
        }
        if sub.clone().svd(false, false).rank(1e-9) < rank {
            continue;
        }
        let val: f64 = basis.iter().zip(xb.iter()).map(|(&j, &v)| c[j] * v).sum();
        best = Some(best.map_or(val, |b: f64| b.min(val)));
    }
    best
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            cur.push(j);
            go(j + 1, n, k, cur, out);
            cur.pop();
        }
    }
    go(0, n, k, &mut cur, &mut out);
    out
}

/// A random bounded LP: `x` in a box, plus a few random rows.
pub fn random_lp(rng: &mut impl Rng, n: usize, m: usize) -> LinearProgram {
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-5.0..5.0)).collect());
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
        let kind = match rng.gen_range(0..3) {
            0 => RowKind::Le,
            1 => RowKind::Ge,
            _ => RowKind::Eq,
        };
        lp.add_row(coeffs, kind, rng.gen_range(-2i32..=4) as f64);
    }
    lp.add_row(vec![1.0; n], RowKind::Le, 10.0);
    lp
}

fn simplex_oracle(seed: u64) -> CheckRow {
    let name = "simplex_oracle";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let lp = random_lp(&mut rng, 3, 2);
        let res = match simplex::solve(&lp) {
            Ok(r) => r,
            Err(e) => return failed(name, e),
        };
        match (res.status, brute_force_lp(&lp)) {
            (LpStatus::Optimal, Some(v)) => worst = worst.max((res.objective - v).abs()),
            (LpStatus::Infeasible, None) => {}
            (status, oracle) => {
                return row(name, false, format!("lp {i}: simplex {status:?}, enumeration {oracle:?}"));
            }
        }
    }
    row(name, worst <= 1e-8, format!("20 random LPs, max gap {}", float17(worst)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_two_points() {
        let pts = [(1.0, 4.0), (3.0, 0.0)];
        assert_eq!(hull_at(&pts, 2.0), Some(2.0));
        assert_eq!(hull_at(&pts, 0.5), None);
        assert_eq!(hull_at(&pts, 5.0), Some(0.0));
    }

    #[test]
    fn tiny_enumeration_counts() {
        // only q = 1 has a choice, so 2^M policies
        let cfg = tiny_config();
        for m in [1, 2] {
            let disc = discretize_channel(&cfg.channel, m).unwrap();
            assert_eq!(enumerate_deterministic(&cfg, &disc).len(), 1 << m);
        }
    }

    #[test]
    fn brute_force_small() {
        // min -x - y, x + y <= 1 -> -1
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.add_row(vec![1.0, 1.0], RowKind::Le, 1.0);
        assert!((brute_force_lp(&lp).unwrap() + 1.0).abs() < 1e-12);
        lp.add_row(vec![1.0, 1.0], RowKind::Ge, 2.0);
        assert_eq!(brute_force_lp(&lp), None);
    }

    #[test]
    fn battery_on_small_setup() {
        let cfg = SystemConfig::paper_iv();
        let opts = BatteryOptions {
            bins: 4,
            d_th: 2.5,
            cells: vec![1, 4, 16],
            seed: 3,
        };
        let rows = run_battery(&cfg, &opts);
        let table = render_table(&rows);
        for name in ["lp_feasible", "strong_duality", "construction_feasible", "simplex_oracle"] {
            let r = rows.iter().find(|r| r.name == name).unwrap();
            assert!(r.passed, "{table}");
        }
    }
}
