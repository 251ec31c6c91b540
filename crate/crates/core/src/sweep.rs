//! Delay-power tradeoff curves, their vertices, and refinement studies.

use thiserror::Error;

use crate::io::float17;
use crate::model::{discretize_channel, ChannelDiscretization, SystemConfig};
use crate::occupancy::{
    evaluate_measure, min_delay, solve_constrained, solve_lagrangian, LagrangianSolution, OccupancyError, Policy,
    PolicyKind,
};
use crate::simplex::LpStatus;

/// Default tolerance for telling two `(D, P)` points apart.
pub const VERTEX_TOL: f64 = 1e-9;
/// Slack for the monotonicity, convexity and dominance checks.
pub const CURVE_TOL: f64 = 1e-8;
/// Smallest weight used for the minimum-power end of the curve, so that ties
/// in power resolve towards the least delay.
pub const LAMBDA_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error("empty curve")]
    EmptyCurve,
    #[error(
        "lambda_max = {lambda_max} reaches delay {delay}, above the minimum {d_min}; raise lambda_max"
    )]
    LambdaTooSmall { lambda_max: f64, delay: f64, d_min: f64 },
    #[error("vertex at lambda = {lambda} is not deterministic: q = {q}, bin {k} mixes rates {s1} and {s2}")]
    NotDeterministic {
        lambda: f64,
        q: usize,
        k: usize,
        s1: usize,
        s2: usize,
    },
    #[error("bin counts must be nondecreasing")]
    UnsortedBins,
    #[error("delay grid must be sorted")]
    UnsortedGrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub d_th: f64,
    pub power: f64,
}

/// A corner of the piecewise-linear tradeoff curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub delay: f64,
    pub power: f64,
    /// A weight at which this vertex is optimal.
    pub lambda: f64,
    pub policy: Policy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexDistance {
    pub pair_index: usize,
    pub euclidean: f64,
    pub delay_axis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub bins: usize,
    pub points: Vec<CurvePoint>,
    /// Budgets that were dropped, with the reason.
    pub notes: Vec<String>,
    pub vertices: Vec<Vertex>,
    pub distances: Vec<VertexDistance>,
}

/// Violations found by the post-hoc shape checks; zero when clean.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeReport {
    /// Largest rise `P(D_{i+1}) - P(D_i)`.
    pub monotonicity: f64,
    /// Largest height of a middle point above the chord of its neighbours.
    pub convexity: f64,
}

impl ShapeReport {
    pub fn ok(&self) -> bool {
        self.monotonicity <= CURVE_TOL && self.convexity <= CURVE_TOL
    }
}

impl TradeoffCurve {
    /// Checks every triple, not just neighbours.
    pub fn shape(&self) -> ShapeReport {
        let p = &self.points;
        let mut r = ShapeReport::default();
        for w in p.windows(2) {
            r.monotonicity = r.monotonicity.max(w[1].power - w[0].power);
        }
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                for l in j + 1..p.len() {
                    let (a, b, c) = (p[i], p[j], p[l]);
                    if c.d_th <= a.d_th {
                        continue;
                    }
                    let t = (b.d_th - a.d_th) / (c.d_th - a.d_th);
                    let chord = a.power + t * (c.power - a.power);
                    r.convexity = r.convexity.max(b.power - chord);
                }
            }
        }
        r
    }

    /// Largest `hull(D) - P(D)` over the grid; positive means a point lies
    /// below the vertex hull.
    pub fn below_hull(&self) -> f64 {
        self.points
            .iter()
            .filter_map(|pt| hull_value(&self.vertices, pt.d_th).map(|h| h - pt.power))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest `|hull(D) - P(D)|` over the grid.
    pub fn hull_mismatch(&self) -> f64 {
        self.points
            .iter()
            .filter_map(|pt| hull_value(&self.vertices, pt.d_th).map(|h| (h - pt.power).abs()))
            .fold(0.0, f64::max)
    }
}

/// Linear interpolation of sorted vertices at `d`; `None` outside their span
/// on the low-delay side. Beyond the last vertex the curve is flat.
pub fn hull_value(vertices: &[Vertex], d: f64) -> Option<f64> {
    let first = vertices.first()?;
    let last = vertices.last()?;
    if d < first.delay - CURVE_TOL {
        return None;
    }
    if d >= last.delay {
        return Some(last.power);
    }
    if d <= first.delay {
        return Some(first.power);
    }
    let i = vertices.partition_point(|v| v.delay <= d) - 1;
    let (a, b) = (&vertices[i], &vertices[i + 1]);
    let t = (d - a.delay) / (b.delay - a.delay);
    Some(a.power + t * (b.power - a.power))
}

/// `n` uniform budgets from `lo` to `hi`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
            .collect(),
    }
}

/// 60 budgets from `D_min` to `3 D_min`.
pub fn default_grid(d_min: f64) -> Vec<f64> {
    uniform_grid(d_min, 3.0 * d_min, 60)
}

/// `1e4 xi(S_max) / h_min`.
pub fn default_lambda_max(cfg: &SystemConfig) -> f64 {
    1e4 * cfg.xi[cfg.max_rate] / cfg.channel.h_min
}

/// Solves one constrained LP per budget.
pub fn sweep_curve(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    grid: &[f64],
) -> Result<TradeoffCurve, SweepError> {
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(SweepError::UnsortedGrid);
    }
    let mut points = Vec::with_capacity(grid.len());
    let mut notes = Vec::new();
    for &d in grid {
        let sol = solve_constrained(cfg, disc, d)?;
        match sol.status {
            LpStatus::Optimal => points.push(CurvePoint { d_th: d, power: sol.objective }),
            status => notes.push(format!("D_th = {}: {:?}", float17(d), status)),
        }
    }
    if points.is_empty() {
        return Err(SweepError::EmptyCurve);
    }
    Ok(TradeoffCurve {
        bins: disc.bins(),
        points,
        notes,
        vertices: Vec::new(),
        distances: Vec::new(),
    })
}

fn same_point(a: &LagrangianSolution, b: &LagrangianSolution, tol: f64) -> bool {
    (a.delay - b.delay).abs() <= tol && (a.power - b.power).abs() <= tol
}

fn split(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    hi_delay: &LagrangianSolution,
    lo_delay: &LagrangianSolution,
    tol: f64,
    out: &mut Vec<LagrangianSolution>,
) -> Result<(), SweepError> {
    if same_point(hi_delay, lo_delay, tol) || hi_delay.delay - lo_delay.delay <= tol {
        return Ok(());
    }
    // weight at which both ends score the same
    let lambda = (lo_delay.power - hi_delay.power) / (hi_delay.delay - lo_delay.delay);
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Ok(());
    }
    let mid = solve_lagrangian(cfg, disc, lambda)?;
    let line = hi_delay.power + lambda * hi_delay.delay;
    if mid.value() >= line - tol {
        return Ok(());
    }
    split(cfg, disc, hi_delay, &mid, tol, out)?;
    split(cfg, disc, &mid, lo_delay, tol, out)?;
    out.push(mid);
    Ok(())
}

/// Keeps only strict corners of the lower convex hull, sorted by delay.
fn strict_hull(mut pts: Vec<LagrangianSolution>, tol: f64) -> Vec<LagrangianSolution> {
    pts.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    let mut uniq: Vec<LagrangianSolution> = Vec::with_capacity(pts.len());
    for p in pts {
        match uniq.last() {
            Some(last) if (p.delay - last.delay).abs() <= tol => {
                if p.power < last.power {
                    *uniq.last_mut().unwrap() = p;
                }
            }
            _ => uniq.push(p),
        }
    }
    // drop points that do not lower the power
    let mut falling: Vec<LagrangianSolution> = Vec::with_capacity(uniq.len());
    for p in uniq {
        if falling.last().is_none_or(|l| p.power < l.power - tol) {
            falling.push(p);
        }
    }
    let mut hull: Vec<LagrangianSolution> = Vec::with_capacity(falling.len());
    for p in falling {
        while hull.len() >= 2 {
            let (a, b) = (&hull[hull.len() - 2], &hull[hull.len() - 1]);
            let cross = (b.delay - a.delay) * (p.power - a.power) - (b.power - a.power) * (p.delay - a.delay);
            if cross <= tol * (p.delay - a.delay).max(1.0) {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Corners of the tradeoff curve found by splitting `[0, lambda_max]` at the
/// weights where neighbouring solutions tie.
pub fn enumerate_vertices(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    lambda_max: f64,
    tol: f64,
) -> Result<Vec<Vertex>, SweepError> {
    let d_min = min_delay(cfg, disc)?;
    let right = solve_lagrangian(cfg, disc, LAMBDA_FLOOR.min(lambda_max))?;
    let left = solve_lagrangian(cfg, disc, lambda_max)?;
    if left.delay > d_min + tol.max(1e-9) {
        return Err(SweepError::LambdaTooSmall {
            lambda_max,
            delay: left.delay,
            d_min,
        });
    }
    let mut found = Vec::new();
    split(cfg, disc, &right, &left, tol, &mut found)?;
    found.push(right);
    found.push(left);
    let hull = strict_hull(found, tol);

    let mut vertices = Vec::with_capacity(hull.len());
    for sol in hull {
        if sol.policy.kind() != PolicyKind::Deterministic {
            let (q, k, s1, s2) = sol.policy.mixed_row().expect("probabilistic policy has a mixed row");
            return Err(SweepError::NotDeterministic {
                lambda: sol.lambda,
                q,
                k,
                s1,
                s2,
            });
        }
        let metrics = evaluate_measure(&sol.measure);
        vertices.push(Vertex {
            delay: metrics.delay,
            power: metrics.power,
            lambda: sol.lambda,
            policy: sol.policy,
        });
    }
    Ok(vertices)
}

/// Euclidean and delay-axis distances between adjacent `(D, P)` points.
pub fn vertex_distances(points: &[(f64, f64)]) -> Vec<VertexDistance> {
    points
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (dd, dp) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            VertexDistance {
                pair_index: i,
                euclidean: dd.hypot(dp),
                delay_axis: dd.abs(),
            }
        })
        .collect()
}

/// Largest distance under each metric, `(euclidean, delay_axis)`.
pub fn max_distances(d: &[VertexDistance]) -> (f64, f64) {
    d.iter()
        .fold((0.0, 0.0), |(e, a), x| (f64::max(e, x.euclidean), f64::max(a, x.delay_axis)))
}

/// Sweep plus vertices for one bin count.
pub fn full_curve(
    cfg: &SystemConfig,
    bins: usize,
    grid: &[f64],
    lambda_max: f64,
) -> Result<TradeoffCurve, SweepError> {
    let disc = discretize_channel(&cfg.channel, bins).map_err(OccupancyError::from)?;
    let mut curve = sweep_curve(cfg, &disc, grid)?;
    curve.vertices = enumerate_vertices(cfg, &disc, lambda_max, VERTEX_TOL)?;
    let pts: Vec<(f64, f64)> = curve.vertices.iter().map(|v| (v.delay, v.power)).collect();
    curve.distances = vertex_distances(&pts);
    Ok(curve)
}

/// A point where a finer curve sits above a coarser one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominanceViolation {
    pub coarse: usize,
    pub fine: usize,
    pub d_th: f64,
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub curves: Vec<TradeoffCurve>,
    pub violations: Vec<DominanceViolation>,
    /// `(M_i, M_{i+1}, max_D |P_i - P_{i+1}|)` for successive curves.
    pub sup_gaps: Vec<(usize, usize, f64)>,
}

fn common_gap(a: &TradeoffCurve, b: &TradeoffCurve) -> f64 {
    let mut gap: f64 = 0.0;
    for p in &a.points {
        if let Some(q) = b.points.iter().find(|q| q.d_th == p.d_th) {
            gap = gap.max((p.power - q.power).abs());
        }
    }
    gap
}

/// Curves for each bin count on a shared grid, with refinement dominance
/// checked wherever one count divides another.
pub fn convergence_study(
    cfg: &SystemConfig,
    bins: &[usize],
    grid: &[f64],
) -> Result<ConvergenceStudy, SweepError> {
    if bins.windows(2).any(|w| w[0] > w[1]) {
        return Err(SweepError::UnsortedBins);
    }
    let mut curves = Vec::with_capacity(bins.len());
    for &m in bins {
        let disc = discretize_channel(&cfg.channel, m).map_err(OccupancyError::from)?;
        curves.push(sweep_curve(cfg, &disc, grid)?);
    }
    let mut violations = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        for f in &curves[i + 1..] {
            if f.bins % c.bins != 0 {
                continue;
            }
            for p in &f.points {
                if let Some(q) = c.points.iter().find(|q| q.d_th == p.d_th) {
                    if p.power > q.power + CURVE_TOL {
                        violations.push(DominanceViolation {
                            coarse: c.bins,
                            fine: f.bins,
                            d_th: p.d_th,
                            excess: p.power - q.power,
                        });
                    }
                }
            }
        }
    }
    let sup_gaps = curves
        .windows(2)
        .map(|w| (w[0].bins, w[1].bins, common_gap(&w[0], &w[1])))
        .collect();
    Ok(ConvergenceStudy {
        curves,
        violations,
        sup_gaps,
    })
}

fn lines(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// `M,D_th,P`.
pub fn curve_csv(curves: &[TradeoffCurve]) -> String {
    lines(
        "M,D_th,P",
        curves.iter().flat_map(|c| {
            c.points
                .iter()
                .map(move |p| format!("{},{},{}", c.bins, float17(p.d_th), float17(p.power)))
        }),
    )
}

/// Name under which a vertex policy is written.
pub fn policy_id(bins: usize, index: usize) -> String {
    format!("policy_M{bins}_v{index}.csv")
}

/// `M,D,P,policy_id`.
pub fn vertices_csv(curves: &[TradeoffCurve]) -> String {
    lines(
        "M,D,P,policy_id",
        curves.iter().flat_map(|c| {
            c.vertices.iter().enumerate().map(move |(i, v)| {
                format!("{},{},{},{}", c.bins, float17(v.delay), float17(v.power), policy_id(c.bins, i))
            })
        }),
    )
}

/// `M,pair_index,euclidean,delay_axis`.
pub fn distances_csv(curves: &[TradeoffCurve]) -> String {
    lines(
        "M,pair_index,euclidean,delay_axis",
        curves.iter().flat_map(|c| {
            c.distances.iter().map(move |d| {
                format!("{},{},{},{}", c.bins, d.pair_index, float17(d.euclidean), float17(d.delay_axis))
            })
        }),
    )
}
