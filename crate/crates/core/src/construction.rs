//! Deterministic threshold policies built from an optimal occupation density.
//!
//! Start from a density `g(q, s, h)` on the continuous channel range and
//! split `(h_min, h_max]` into `M` equal cells. For every queue state `q`,
//! let `U_q(x)` be the accumulated mass of `q` up to gain `x`. Inside cell
//! `k` the whole mass of `q` is handed out to the rates in increasing order:
//! rate `s` receives the stretch `(h^min_{k,s,q}, h^max_{k,s,q}]` where
//!
//! ```text
//! h^max_{k,s,q} = U_q^{-1}( U_q(h_k^min) + int_{cell k} sum_{x <= s} g(q, x, h) dh )
//! h^min_{k,s,q} = h^max_{k,s-1,q},   h^max_{k,-1,q} = h_k^min
//! ```
//!
//! and the constructed density is `y_M(q, s, h) = sum_x g(q, x, h)` on that
//! stretch, zero elsewhere. Per-(q, s) masses are preserved exactly, so delay
//! and queue balance carry over, while each `(q, h)` now has a single rate.
//! Its power is at most `1 + (h_max - h_min) / (M h_min)` times the source
//! power.
//!
//! All integrals are exact: densities are piecewise constant, so masses are
//! sums of rectangle areas and power integrals are sums of logarithms.

use thiserror::Error;

use crate::model::{ChannelDiscretization, SystemConfig};
use crate::occupancy::{balance_residuals, OccupancyMeasure};
use crate::simulator::RatePolicy;

/// Slack allowed when inverting an envelope.
pub const INVERT_TOL: f64 = 1e-12;
/// Default number of stratified samples for pointwise checks.
pub const DEFAULT_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConstructionError {
    #[error("mass out of range: {value} exceeds envelope total {total}")]
    MassOutOfRange { value: f64, total: f64 },
    #[error("density shape mismatch: {0}")]
    Shape(String),
    #[error("cell count must be at least 1")]
    ZeroCells,
    #[error("not deterministic: q = {} has rates {} and {} at h = {}", .0.q, .0.s1, .0.s2, .0.h)]
    NotDeterministic(Witness),
}

/// A point where two rates are both in use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub q: usize,
    pub h: f64,
    pub s1: usize,
    pub s2: usize,
}

/// Something that assigns a density to every `(q, s, h)`.
pub trait RateDensity {
    fn config(&self) -> &SystemConfig;
    fn value(&self, q: usize, s: usize, h: f64) -> f64;
    /// Extra points worth sampling besides a uniform stratification.
    fn sample_hints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Piecewise-constant density `g(q, s, h)` on a shared breakpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDensity {
    cfg: SystemConfig,
    breaks: Vec<f64>,
    /// Indexed `(q * (S_max + 1) + s) * pieces + piece`.
    values: Vec<f64>,
}

impl PiecewiseDensity {
    pub fn new(cfg: &SystemConfig, breaks: Vec<f64>, values: Vec<f64>) -> Result<Self, ConstructionError> {
        let pieces = breaks.len().saturating_sub(1);
        let expected = (cfg.buffer + 1) * (cfg.max_rate + 1) * pieces;
        if pieces == 0 || values.len() != expected {
            return Err(ConstructionError::Shape(format!(
                "expected {expected} values on {pieces} pieces, got {}",
                values.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ConstructionError::Shape("breakpoints must increase".into()));
        }
        if breaks[0] != cfg.channel.h_min || breaks[pieces] != cfg.channel.h_max {
            return Err(ConstructionError::Shape(
                "breakpoints must span (h_min, h_max]".into(),
            ));
        }
        Ok(Self {
            cfg: cfg.clone(),
            breaks,
            values,
        })
    }

    /// Spreads each bin's mass over the bin in proportion to the channel
    /// density: `g(q, s, h) = g[q][s][k] f_H(h) / p_k`. For a uniform channel
    /// this is a flat spread, and in every case the power of the result
    /// equals the discretized objective.
    pub fn from_measure(m: &OccupancyMeasure) -> Self {
        let cfg = m.config();
        let disc: &ChannelDiscretization = m.discretization();
        let mut breaks: Vec<f64> = disc.edges.clone();
        for p in cfg.channel.pieces() {
            breaks.push(p.lo);
            breaks.push(p.hi);
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();

        let pieces = breaks.len() - 1;
        let (qn, sn) = (cfg.buffer + 1, cfg.max_rate + 1);
        let mut values = vec![0.0; qn * sn * pieces];
        for i in 0..pieces {
            let mid = 0.5 * (breaks[i] + breaks[i + 1]);
            let k = disc.bin_of(mid);
            let f = cfg.channel.density_at(mid) / disc.masses[k];
            for q in 0..qn {
                for s in 0..sn {
                    values[(q * sn + s) * pieces + i] = m.get(q, s, k) * f;
                }
            }
        }
        Self {
            cfg: cfg.clone(),
            breaks,
            values,
        }
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> usize {
        self.breaks.len() - 1
    }

    fn rates(&self) -> usize {
        self.cfg.max_rate + 1
    }

    fn queue_states(&self) -> usize {
        self.cfg.buffer + 1
    }

    pub fn piece_value(&self, q: usize, s: usize, piece: usize) -> f64 {
        self.values[(q * self.rates() + s) * self.pieces() + piece]
    }

    fn piece_of(&self, h: f64) -> Option<usize> {
        if h <= self.breaks[0] || h > *self.breaks.last().unwrap() {
            return None;
        }
        Some(self.breaks[1..].partition_point(|&b| b < h))
    }

    /// `sum_s g(q, s, h)`.
    pub fn queue_value(&self, q: usize, h: f64) -> f64 {
        (0..self.rates()).map(|s| self.value(q, s, h)).sum()
    }

    /// `int_a^b g(q, s, h) dh`.
    pub fn rate_integral(&self, q: usize, s: usize, a: f64, b: f64) -> f64 {
        self.integrate(q, Some(s), a, b, false)
    }

    /// `int_a^b sum_s g(q, s, h) dh`.
    pub fn queue_integral(&self, q: usize, a: f64, b: f64) -> f64 {
        self.integrate(q, None, a, b, false)
    }

    /// `int_a^b sum_s g(q, s, h) / h dh`.
    pub fn queue_inverse_integral(&self, q: usize, a: f64, b: f64) -> f64 {
        self.integrate(q, None, a, b, true)
    }

    fn integrate(&self, q: usize, s: Option<usize>, a: f64, b: f64, inverse: bool) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.pieces() {
            let lo = a.max(self.breaks[i]);
            let hi = b.min(self.breaks[i + 1]);
            if hi <= lo {
                continue;
            }
            let v = match s {
                Some(s) => self.piece_value(q, s, i),
                None => (0..self.rates()).map(|x| self.piece_value(q, x, i)).sum(),
            };
            if v == 0.0 {
                continue;
            }
            acc += if inverse { v * (hi / lo).ln() } else { v * (hi - lo) };
        }
        acc
    }

    /// Average power `sum_{q,s} xi(s) int g(q, s, h) / h dh`.
    pub fn power(&self) -> f64 {
        let mut p = 0.0;
        for q in 0..self.queue_states() {
            for s in 0..self.rates() {
                for i in 0..self.pieces() {
                    let v = self.piece_value(q, s, i);
                    if v != 0.0 {
                        p += self.cfg.xi[s] * v * (self.breaks[i + 1] / self.breaks[i]).ln();
                    }
                }
            }
        }
        p
    }

    /// Average delay by Little's law.
    pub fn delay(&self) -> f64 {
        let a_bar = self.cfg.mean_arrival_rate();
        if a_bar == 0.0 {
            return 0.0;
        }
        let (lo, hi) = (self.cfg.channel.h_min, self.cfg.channel.h_max);
        (0..self.queue_states())
            .map(|q| q as f64 * self.queue_integral(q, lo, hi))
            .sum::<f64>()
            / a_bar
    }

    /// Largest `|sum_{q,s} g - f_H|` over piece midpoints.
    pub fn channel_residual(&self) -> f64 {
        (0..self.pieces())
            .map(|i| {
                let mid = 0.5 * (self.breaks[i] + self.breaks[i + 1]);
                let total: f64 = (0..self.queue_states()).map(|q| self.queue_value(q, mid)).sum();
                (total - self.cfg.channel.density_at(mid)).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl RateDensity for PiecewiseDensity {
    fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    fn value(&self, q: usize, s: usize, h: f64) -> f64 {
        self.piece_of(h).map_or(0.0, |i| self.piece_value(q, s, i))
    }

    fn sample_hints(&self) -> Vec<f64> {
        self.breaks
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }
}

/// Cumulative mass `U_q` of one queue state, piecewise linear in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfEnvelope {
    pub q: usize,
    /// Breakpoints `(x, U_q(x))`, `x` increasing.
    pub points: Vec<(f64, f64)>,
}

impl CdfEnvelope {
    pub fn total(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        if x >= pts[pts.len() - 1].0 {
            return self.total();
        }
        let i = pts.partition_point(|p| p.0 <= x) - 1;
        let (x0, u0) = pts[i];
        let (x1, u1) = pts[i + 1];
        u0 + (u1 - u0) * (x - x0) / (x1 - x0)
    }

    /// Leftmost `x` with `U_q(x) >= v`, up to [`INVERT_TOL`].
    pub fn invert(&self, v: f64) -> Result<f64, ConstructionError> {
        let total = self.total();
        if v > total + INVERT_TOL {
            return Err(ConstructionError::MassOutOfRange { value: v, total });
        }
        let pts = &self.points;
        if v <= pts[0].1 + INVERT_TOL {
            return Ok(pts[0].0);
        }
        for w in pts.windows(2) {
            let ((x0, u0), (x1, u1)) = (w[0], w[1]);
            if u1 >= v - INVERT_TOL {
                if u1 <= u0 {
                    return Ok(x0);
                }
                let t = ((v - u0) / (u1 - u0)).clamp(0.0, 1.0);
                return Ok(x0 + t * (x1 - x0));
            }
        }
        Ok(pts[pts.len() - 1].0)
    }
}

/// `U_q(x) = int_{h_min}^x sum_s g(q, s, h) dh`.
pub fn compute_envelope(d: &PiecewiseDensity, q: usize) -> CdfEnvelope {
    let mut points = Vec::with_capacity(d.breaks.len());
    let mut acc = 0.0;
    points.push((d.breaks[0], 0.0));
    for i in 0..d.pieces() {
        let v: f64 = (0..d.rates()).map(|s| d.piece_value(q, s, i)).sum();
        acc += v * (d.breaks[i + 1] - d.breaks[i]);
        points.push((d.breaks[i + 1], acc));
    }
    CdfEnvelope { q, points }
}

/// Threshold family `h^max_{k,s,q}` on an `M`-cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    cells: usize,
    rates: usize,
    queue_states: usize,
    /// `grid[k] = h_min + k (h_max - h_min) / M`.
    pub grid: Vec<f64>,
    upper: Vec<f64>,
}

impl Thresholds {
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// `h^max_{k,s,q}` for cell `k` in `0..M`.
    pub fn upper(&self, k: usize, s: usize, q: usize) -> f64 {
        self.upper[(k * self.rates + s) * self.queue_states + q]
    }

    /// `h^min_{k,s,q} = h^max_{k,s-1,q}`, with `h_k^min` for `s = 0`.
    pub fn lower(&self, k: usize, s: usize, q: usize) -> f64 {
        if s == 0 {
            self.grid[k]
        } else {
            self.upper(k, s - 1, q)
        }
    }
}

fn cell_grid(cfg: &SystemConfig, cells: usize) -> Vec<f64> {
    let (lo, hi) = (cfg.channel.h_min, cfg.channel.h_max);
    let mut grid: Vec<f64> = (0..=cells)
        .map(|k| lo + k as f64 * (hi - lo) / cells as f64)
        .collect();
    grid[cells] = hi;
    grid
}

/// Computes every `h^max_{k,s,q}`.
///
/// The pseudo-inverse is taken inside the cell: where `U_q` is flat the
/// leftmost admissible point is used, and the top rate closes the cell at
/// `h_k^max`. Both choices only move boundaries through zero-density
/// stretches.
pub fn compute_thresholds(d: &PiecewiseDensity, cells: usize) -> Result<Thresholds, ConstructionError> {
    if cells == 0 {
        return Err(ConstructionError::ZeroCells);
    }
    let (qn, sn) = (d.queue_states(), d.rates());
    let grid = cell_grid(&d.cfg, cells);
    let h_min = grid[0];
    let mut upper = vec![0.0; cells * sn * qn];
    for q in 0..qn {
        let env = compute_envelope(d, q);
        for k in 0..cells {
            let (lo, hi) = (grid[k], grid[k + 1]);
            let before = d.queue_integral(q, h_min, lo);
            let mut partial = 0.0;
            let mut prev = lo;
            for s in 0..sn {
                let h = if s + 1 == sn {
                    hi
                } else {
                    partial += d.rate_integral(q, s, lo, hi);
                    env.invert(before + partial)?.clamp(prev, hi)
                };
                upper[(k * sn + s) * qn + q] = h;
                prev = h;
            }
        }
    }
    Ok(Thresholds {
        cells,
        rates: sn,
        queue_states: qn,
        grid,
        upper,
    })
}

/// Half-open stretch `(lo, hi]` of gains inside cell `cell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub cell: usize,
}

impl Interval {
    pub fn contains(&self, h: f64) -> bool {
        h > self.lo && h <= self.hi
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

/// The constructed density `y_M` and the data it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructedSolution {
    source: PiecewiseDensity,
    thresholds: Thresholds,
    /// Indexed `q * (S_max + 1) + s`; one interval per cell, possibly empty.
    intervals: Vec<Vec<Interval>>,
}

/// Builds `y_M` from `d` on an `M`-cell grid.
pub fn construct_ym(d: &PiecewiseDensity, cells: usize) -> Result<ConstructedSolution, ConstructionError> {
    let thresholds = compute_thresholds(d, cells)?;
    let (qn, sn) = (d.queue_states(), d.rates());
    let mut intervals = vec![Vec::with_capacity(cells); qn * sn];
    for q in 0..qn {
        for s in 0..sn {
            for k in 0..cells {
                intervals[q * sn + s].push(Interval {
                    lo: thresholds.lower(k, s, q),
                    hi: thresholds.upper(k, s, q),
                    cell: k,
                });
            }
        }
    }
    Ok(ConstructedSolution {
        source: d.clone(),
        thresholds,
        intervals,
    })
}

impl ConstructedSolution {
    pub fn cells(&self) -> usize {
        self.thresholds.cells
    }

    pub fn source(&self) -> &PiecewiseDensity {
        &self.source
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn intervals(&self, q: usize, s: usize) -> &[Interval] {
        &self.intervals[q * self.source.rates() + s]
    }

    /// Mutable access to the stretches, for fault-injection tests.
    pub fn intervals_mut(&mut self, q: usize, s: usize) -> &mut Vec<Interval> {
        let sn = self.source.rates();
        &mut self.intervals[q * sn + s]
    }

    /// `int y_M(q, s, h) dh`.
    pub fn rate_mass(&self, q: usize, s: usize) -> f64 {
        self.intervals(q, s)
            .iter()
            .filter(|iv| !iv.is_empty())
            .map(|iv| self.source.queue_integral(q, iv.lo, iv.hi))
            .sum()
    }

    /// Average power of `y_M`.
    pub fn power(&self) -> f64 {
        let cfg = &self.source.cfg;
        let mut p = 0.0;
        for q in 0..self.source.queue_states() {
            for s in 0..self.source.rates() {
                let inv: f64 = self
                    .intervals(q, s)
                    .iter()
                    .filter(|iv| !iv.is_empty())
                    .map(|iv| self.source.queue_inverse_integral(q, iv.lo, iv.hi))
                    .sum();
                p += cfg.xi[s] * inv;
            }
        }
        p
    }

    /// Average delay of `y_M` by Little's law.
    pub fn delay(&self) -> f64 {
        let a_bar = self.source.cfg.mean_arrival_rate();
        if a_bar == 0.0 {
            return 0.0;
        }
        let mut queue = 0.0;
        for q in 0..self.source.queue_states() {
            for s in 0..self.source.rates() {
                queue += q as f64 * self.rate_mass(q, s);
            }
        }
        queue / a_bar
    }

    /// Worst gap or overlap when the stretches of each queue state are laid
    /// end to end over `(h_min, h_max]`.
    pub fn partition_defect(&self) -> f64 {
        let cfg = &self.source.cfg;
        let mut worst: f64 = 0.0;
        for q in 0..self.source.queue_states() {
            let mut all: Vec<Interval> = (0..self.source.rates())
                .flat_map(|s| self.intervals(q, s).iter().copied())
                .filter(|iv| !iv.is_empty())
                .collect();
            all.sort_by(|a, b| a.lo.total_cmp(&b.lo));
            let mut cursor = cfg.channel.h_min;
            for iv in &all {
                worst = worst.max((iv.lo - cursor).abs());
                cursor = iv.hi;
            }
            worst = worst.max((cfg.channel.h_max - cursor).abs());
        }
        worst
    }

    /// Exact disjointness check: the first pair of positive-length stretches
    /// of one queue state that overlap, if any.
    pub fn overlap_witness(&self) -> Option<Witness> {
        for q in 0..self.source.queue_states() {
            let mut all: Vec<(Interval, usize)> = (0..self.source.rates())
                .flat_map(|s| self.intervals(q, s).iter().map(move |iv| (*iv, s)))
                .filter(|(iv, _)| !iv.is_empty())
                .collect();
            all.sort_by(|a, b| a.0.lo.total_cmp(&b.0.lo));
            for w in all.windows(2) {
                let ((a, sa), (b, sb)) = (w[0], w[1]);
                if b.lo < a.hi {
                    let h = 0.5 * (b.lo + a.hi.min(b.hi));
                    let (s1, s2) = (sa.min(sb), sa.max(sb));
                    return Some(Witness { q, h, s1, s2 });
                }
            }
        }
        None
    }
}

impl RateDensity for ConstructedSolution {
    fn config(&self) -> &SystemConfig {
        &self.source.cfg
    }

    fn value(&self, q: usize, s: usize, h: f64) -> f64 {
        if self.intervals(q, s).iter().any(|iv| iv.contains(h)) {
            self.source.queue_value(q, h)
        } else {
            0.0
        }
    }

    fn sample_hints(&self) -> Vec<f64> {
        self.intervals
            .iter()
            .flatten()
            .filter(|iv| !iv.is_empty())
            .map(|iv| 0.5 * (iv.lo + iv.hi))
            .collect()
    }
}

/// Residuals of the feasibility conditions for `y_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    /// `max |sum_{q,s} y(q, s, h) - f_H(h)|` over sampled `h`.
    pub channel: f64,
    /// Largest queue-balance residual.
    pub balance: f64,
    /// `|D(y) - D(source)|`.
    pub delay: f64,
    pub delay_constructed: f64,
    pub delay_source: f64,
    /// Magnitude of the most negative density value.
    pub nonnegativity: f64,
    /// Mass on structurally excluded `(q, s)`.
    pub structural: f64,
    /// `max |int y(q, s, .) - int g(q, s, .)|`.
    pub rate_preservation: f64,
    pub samples: usize,
}

impl FeasibilityReport {
    pub fn max_constraint_residual(&self) -> f64 {
        [
            self.channel,
            self.balance,
            self.delay,
            self.nonnegativity,
            self.structural,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn to_key_values(&self) -> String {
        use crate::io::float17;
        format!(
            "channel_density={}\nbalance={}\ndelay={}\ndelay_constructed={}\ndelay_source={}\n\
             nonnegativity={}\nstructural_zeros={}\nrate_preservation={}\nsamples={}\n",
            float17(self.channel),
            float17(self.balance),
            float17(self.delay),
            float17(self.delay_constructed),
            float17(self.delay_source),
            float17(self.nonnegativity),
            float17(self.structural),
            float17(self.rate_preservation),
            self.samples
        )
    }
}

fn stratified(cfg: &SystemConfig, samples: usize) -> Vec<f64> {
    let (lo, hi) = (cfg.channel.h_min, cfg.channel.h_max);
    let w = (hi - lo) / samples as f64;
    (0..samples).map(|i| lo + (i as f64 + 0.5) * w).collect()
}

pub fn verify_feasibility(y: &ConstructedSolution) -> FeasibilityReport {
    verify_feasibility_with(y, DEFAULT_SAMPLES)
}

pub fn verify_feasibility_with(y: &ConstructedSolution, samples: usize) -> FeasibilityReport {
    let d = &y.source;
    let cfg = &d.cfg;
    let (qn, sn) = (d.queue_states(), d.rates());
    let (lo, hi) = (cfg.channel.h_min, cfg.channel.h_max);

    let channel = stratified(cfg, samples)
        .into_iter()
        .map(|h| {
            let total: f64 = (0..qn)
                .flat_map(|q| (0..sn).map(move |s| (q, s)))
                .map(|(q, s)| y.value(q, s, h))
                .sum();
            (total - cfg.channel.density_at(h)).abs()
        })
        .fold(0.0, f64::max);

    let masses: Vec<f64> = (0..qn)
        .flat_map(|q| (0..sn).map(move |s| (q, s)))
        .map(|(q, s)| y.rate_mass(q, s))
        .collect();
    let balance = balance_residuals(cfg, |q, s| masses[q * sn + s])
        .into_iter()
        .fold(0.0, |acc: f64, r| acc.max(r.abs()));

    let delay_constructed = y.delay();
    let delay_source = d.delay();

    let nonnegativity = d
        .values
        .iter()
        .map(|&v| (-v).max(0.0))
        .fold(0.0, f64::max);

    let mut structural = 0.0;
    let mut rate_preservation: f64 = 0.0;
    for q in 0..qn {
        for s in 0..sn {
            let m = masses[q * sn + s];
            if !cfg.admissible(q, s) {
                structural += m.abs();
            }
            rate_preservation = rate_preservation.max((m - d.rate_integral(q, s, lo, hi)).abs());
        }
    }

    FeasibilityReport {
        channel,
        balance,
        delay: (delay_constructed - delay_source).abs(),
        delay_constructed,
        delay_source,
        nonnegativity,
        structural,
        rate_preservation,
        samples,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeterminismReport {
    pub deterministic: bool,
    pub witness: Option<Witness>,
    pub points_checked: usize,
}

/// Checks that at most one rate carries positive density at each sampled
/// `(q, h)`: `samples` stratified points plus the density's own hints.
pub fn verify_deterministic(y: &impl RateDensity, samples: usize) -> DeterminismReport {
    let cfg = y.config();
    let mut points = stratified(cfg, samples.max(1));
    points.extend(y.sample_hints());
    let (qn, sn) = (cfg.buffer + 1, cfg.max_rate + 1);
    for &h in &points {
        for q in 0..qn {
            let positive: Vec<usize> = (0..sn).filter(|&s| y.value(q, s, h) > 0.0).collect();
            if positive.len() > 1 {
                return DeterminismReport {
                    deterministic: false,
                    witness: Some(Witness {
                        q,
                        h,
                        s1: positive[0],
                        s2: positive[1],
                    }),
                    points_checked: points.len(),
                };
            }
        }
    }
    DeterminismReport {
        deterministic: true,
        witness: None,
        points_checked: points.len(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRatio {
    /// Power of the constructed solution.
    pub constructed: f64,
    /// Power of the source density.
    pub source: f64,
    pub ratio: f64,
    /// `1 + (h_max - h_min) / (M h_min)`.
    pub bound: f64,
}

impl PowerRatio {
    pub fn within_upper_bound(&self) -> bool {
        self.ratio <= self.bound + 1e-10
    }

    pub fn at_least_one(&self) -> bool {
        self.ratio >= 1.0 - 1e-10
    }
}

/// Compares the power of `y` with that of the density it was built from.
pub fn power_ratio(y: &ConstructedSolution, d: &PiecewiseDensity) -> PowerRatio {
    let constructed = y.power();
    let source = d.power();
    let ch = &d.cfg.channel;
    let bound = 1.0 + (ch.h_max - ch.h_min) / (y.cells() as f64 * ch.h_min);
    let ratio = if source == 0.0 && constructed == 0.0 {
        1.0
    } else {
        constructed / source
    };
    PowerRatio {
        constructed,
        source,
        ratio,
        bound,
    }
}

/// One rule of a threshold policy: use rate `s` for gains in `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRule {
    pub lo: f64,
    pub hi: f64,
    pub s: usize,
    /// Set when the stretch carries no stationary mass and `s` is the
    /// `min(q, S_max)` convention rather than a constructed choice.
    pub conventional: bool,
}

/// Deterministic policy over the continuous gain: for each queue state an
/// ordered, gap-free list of rules covering `(h_min, h_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPolicy {
    pub rules: Vec<Vec<ThresholdRule>>,
}

impl ThresholdPolicy {
    pub fn lookup(&self, q: usize, h: f64) -> usize {
        let rules = &self.rules[q];
        let i = rules.partition_point(|r| r.hi < h).min(rules.len() - 1);
        rules[i].s
    }
}

impl RatePolicy for ThresholdPolicy {
    fn choose(&self, q: usize, h: f64, _u: f64) -> usize {
        self.lookup(q, h)
    }
}

/// Reads the threshold policy off a deterministic construction.
pub fn ym_to_policy(y: &ConstructedSolution) -> Result<ThresholdPolicy, ConstructionError> {
    if let Some(w) = y.overlap_witness() {
        return Err(ConstructionError::NotDeterministic(w));
    }
    let report = verify_deterministic(y, 1);
    if let Some(w) = report.witness {
        return Err(ConstructionError::NotDeterministic(w));
    }
    let cfg = &y.source.cfg;
    let mut rules = Vec::with_capacity(cfg.buffer + 1);
    for q in 0..=cfg.buffer {
        let mut list: Vec<ThresholdRule> = (0..=cfg.max_rate)
            .flat_map(|s| y.intervals(q, s).iter().map(move |iv| (*iv, s)))
            .filter(|(iv, _)| !iv.is_empty())
            .map(|(iv, s)| {
                let carries_mass = y.source.queue_integral(q, iv.lo, iv.hi) > 0.0;
                if carries_mass {
                    ThresholdRule {
                        lo: iv.lo,
                        hi: iv.hi,
                        s,
                        conventional: false,
                    }
                } else {
                    ThresholdRule {
                        lo: iv.lo,
                        hi: iv.hi,
                        s: q.min(cfg.max_rate),
                        conventional: true,
                    }
                }
            })
            .collect();
        list.sort_by(|a, b| a.lo.total_cmp(&b.lo));
        let mut merged: Vec<ThresholdRule> = Vec::with_capacity(list.len());
        for r in list {
            match merged.last_mut() {
                Some(last) if last.s == r.s && last.conventional == r.conventional && last.hi == r.lo => {
                    last.hi = r.hi;
                }
                _ => merged.push(r),
            }
        }
        rules.push(merged);
    }
    Ok(ThresholdPolicy { rules })
}
