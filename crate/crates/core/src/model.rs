//! Physical and queueing model of the link.
//!
//! Packets arrive at the start of each slot according to an i.i.d. law on
//! `{0, ..., A}`, wait in a buffer of `Q` packets, and leave at a rate
//! `s in {0, ..., S_max}` chosen every slot. Sending `s` packets over a
//! channel with energy gain `h` costs `xi(s) / h`. The gain is drawn i.i.d.
//! per slot from a density on `(h_min, h_max]`.
//!
//! Queue states and rates are indexed from zero: `q in {0, ..., Q}` and
//! `s in {0, ..., S_max}`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for probability comparisons.
pub const PROB_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("arrival law is empty")]
    EmptyArrivals,
    #[error("negative or non-finite arrival probability alpha_{0}")]
    BadProbability(usize),
    #[error("probabilities do not sum to 1 (sum = {0})")]
    ProbabilitySum(f64),
    #[error("h_min <= 0")]
    NonPositiveHMin,
    #[error("h_min >= h_max")]
    EmptyChannelRange,
    #[error("density table: {0}")]
    BadDensityTable(String),
    #[error("negative density on piece {0}")]
    NegativeDensity(usize),
    #[error("density does not integrate to 1 (integral = {0})")]
    DensityMass(f64),
    #[error("S_max < A")]
    RateBelowArrivals,
    #[error("Q < A")]
    BufferBelowArrivals,
    #[error("xi must have S_max + 1 = {expected} entries, got {got}")]
    XiLength { expected: usize, got: usize },
    #[error("xi(0) < 0")]
    NegativeIdleCost,
    #[error("xi not strictly increasing at s = {0}")]
    XiNotIncreasing(usize),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("empty channel bin {0}")]
    EmptyBin(usize),
}

/// Distribution of the number of packets arriving per slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalModel {
    /// `alphas[k] = Pr{a = k}` for `k = 0..=A`.
    pub alphas: Vec<f64>,
}

impl ArrivalModel {
    pub fn new(alphas: Vec<f64>) -> Self {
        Self { alphas }
    }

    /// Largest possible arrival count `A`.
    pub fn max_arrivals(&self) -> usize {
        self.alphas.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.alphas.is_empty() {
            return Err(ModelError::EmptyArrivals);
        }
        for (k, &a) in self.alphas.iter().enumerate() {
            if !a.is_finite() || a < 0.0 {
                return Err(ModelError::BadProbability(k));
            }
        }
        let sum: f64 = self.alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ModelError::ProbabilitySum(sum));
        }
        Ok(())
    }
}

/// Average number of packets arriving per slot, `sum_k k * alpha_k`.
pub fn mean_arrival_rate(arr: &ArrivalModel) -> f64 {
    arr.alphas
        .iter()
        .enumerate()
        .map(|(k, &a)| k as f64 * a)
        .sum()
}

/// Shape of the channel gain density on `(h_min, h_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ChannelDensity {
    Uniform,
    /// Constant `values[i]` on `(edges[i], edges[i + 1]]`, with
    /// `edges[0] = h_min` and `edges.last() = h_max`.
    PiecewiseConstant { edges: Vec<f64>, values: Vec<f64> },
}

/// One constant piece of the channel density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityPiece {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
}

impl DensityPiece {
    /// `int_a^b value dh` restricted to this piece.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.lo);
        let hi = b.min(self.hi);
        if hi <= lo {
            0.0
        } else {
            self.value * (hi - lo)
        }
    }

    /// `int_a^b value / h dh` restricted to this piece.
    pub fn inverse_mass_between(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.lo);
        let hi = b.min(self.hi);
        if hi <= lo || self.value == 0.0 {
            0.0
        } else {
            self.value * (hi / lo).ln()
        }
    }
}

/// I.i.d. block-fading channel: the energy gain of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub h_min: f64,
    pub h_max: f64,
    pub density: ChannelDensity,
}

impl ChannelModel {
    pub fn uniform(h_min: f64, h_max: f64) -> Self {
        Self {
            h_min,
            h_max,
            density: ChannelDensity::Uniform,
        }
    }

    pub fn piecewise(edges: Vec<f64>, values: Vec<f64>) -> Self {
        let h_min = edges.first().copied().unwrap_or(f64::NAN);
        let h_max = edges.last().copied().unwrap_or(f64::NAN);
        Self {
            h_min,
            h_max,
            density: ChannelDensity::PiecewiseConstant { edges, values },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.h_min > 0.0) {
            return Err(ModelError::NonPositiveHMin);
        }
        if !(self.h_min < self.h_max) || !self.h_max.is_finite() {
            return Err(ModelError::EmptyChannelRange);
        }
        if let ChannelDensity::PiecewiseConstant { edges, values } = &self.density {
            if edges.len() < 2 || values.len() + 1 != edges.len() {
                return Err(ModelError::BadDensityTable(
                    "need n + 1 edges for n values".into(),
                ));
            }
            if edges[0] != self.h_min || *edges.last().unwrap() != self.h_max {
                return Err(ModelError::BadDensityTable(
                    "edges must start at h_min and end at h_max".into(),
                ));
            }
            if edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(ModelError::BadDensityTable(
                    "edges must be strictly increasing".into(),
                ));
            }
            for (i, &v) in values.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(ModelError::NegativeDensity(i));
                }
            }
        }
        let total = self.cdf(self.h_max);
        if (total - 1.0).abs() > PROB_TOL {
            return Err(ModelError::DensityMass(total));
        }
        Ok(())
    }

    /// The density as a list of constant pieces covering `(h_min, h_max]`.
    pub fn pieces(&self) -> Vec<DensityPiece> {
        match &self.density {
            ChannelDensity::Uniform => vec![DensityPiece {
                lo: self.h_min,
                hi: self.h_max,
                value: 1.0 / (self.h_max - self.h_min),
            }],
            ChannelDensity::PiecewiseConstant { edges, values } => edges
                .windows(2)
                .zip(values)
                .map(|(w, &value)| DensityPiece {
                    lo: w[0],
                    hi: w[1],
                    value,
                })
                .collect(),
        }
    }

    /// `f_H(h)`, zero outside `(h_min, h_max]`.
    pub fn density_at(&self, h: f64) -> f64 {
        if h <= self.h_min || h > self.h_max {
            return 0.0;
        }
        self.pieces()
            .into_iter()
            .find(|p| h > p.lo && h <= p.hi)
            .map_or(0.0, |p| p.value)
    }

    /// Probability mass of `(a, b]`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        self.pieces().iter().map(|p| p.mass_between(a, b)).sum()
    }

    /// `int_a^b f_H(h) / h dh`, exact for constant pieces.
    pub fn inverse_mass(&self, a: f64, b: f64) -> f64 {
        self.pieces()
            .iter()
            .map(|p| p.inverse_mass_between(a, b))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.mass(self.h_min, x)
    }

    /// Leftmost `h` with `cdf(h) >= u`.
    pub fn cdf_inverse(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.h_min;
        }
        let mut cum = 0.0;
        let mut last_positive_hi = self.h_min;
        for p in self.pieces() {
            if p.value <= 0.0 {
                continue;
            }
            let m = p.value * (p.hi - p.lo);
            if cum + m >= u {
                let x = p.lo + (u - cum) / p.value;
                return x.clamp(p.lo, p.hi);
            }
            cum += m;
            last_positive_hi = p.hi;
        }
        last_positive_hi
    }
}

/// Complete description of the link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub arrival: ArrivalModel,
    pub channel: ChannelModel,
    /// Buffer size `Q`.
    pub buffer: usize,
    /// Largest transmission rate `S_max`.
    pub max_rate: usize,
    /// Energy cost per unit gain, `xi[s]` for `s = 0..=S_max`.
    pub xi: Vec<f64>,
}

impl SystemConfig {
    /// The setup used in the numerical study: `A = S_max = 2`,
    /// `alpha = (0.4, 0.3, 0.3)`, `Q = 10`, `xi(s) = 2^s - 1`, gains uniform on
    /// `(0.5, 10]`.
    pub fn paper_iv() -> Self {
        Self {
            arrival: ArrivalModel::new(vec![0.4, 0.3, 0.3]),
            channel: ChannelModel::uniform(0.5, 10.0),
            buffer: 10,
            max_rate: 2,
            xi: exp2_minus_one(2),
        }
    }

    pub fn max_arrivals(&self) -> usize {
        self.arrival.max_arrivals()
    }

    pub fn mean_arrival_rate(&self) -> f64 {
        mean_arrival_rate(&self.arrival)
    }

    /// Whether `g(q, s, .)` may be nonzero: `0 <= q - s <= Q - A` and
    /// `s <= S_max`.
    pub fn admissible(&self, q: usize, s: usize) -> bool {
        s <= self.max_rate
            && q <= self.buffer
            && s <= q
            && q - s <= self.buffer - self.max_arrivals()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.arrival.validate()?;
        self.channel.validate()?;
        let a = self.max_arrivals();
        if self.max_rate < a {
            return Err(ModelError::RateBelowArrivals);
        }
        if self.buffer < a {
            return Err(ModelError::BufferBelowArrivals);
        }
        if self.xi.len() != self.max_rate + 1 {
            return Err(ModelError::XiLength {
                expected: self.max_rate + 1,
                got: self.xi.len(),
            });
        }
        if !(self.xi[0] >= 0.0) {
            return Err(ModelError::NegativeIdleCost);
        }
        for s in 1..self.xi.len() {
            if !(self.xi[s] > self.xi[s - 1]) || !self.xi[s].is_finite() {
                return Err(ModelError::XiNotIncreasing(s));
            }
        }
        Ok(())
    }
}

/// Returns `cfg` unchanged when every model invariant holds.
pub fn validate_config(cfg: SystemConfig) -> Result<SystemConfig, ModelError> {
    cfg.validate()?;
    Ok(cfg)
}

/// `xi(s) = 2^s - 1` for `s = 0..=max_rate`.
pub fn exp2_minus_one(max_rate: usize) -> Vec<f64> {
    (0..=max_rate).map(|s| 2f64.powi(s as i32) - 1.0).collect()
}

/// Equal-width partition of the channel range with exact per-bin statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDiscretization {
    /// `edges[0] = h_min < ... < edges[M] = h_max`.
    pub edges: Vec<f64>,
    /// Probability mass of each bin.
    pub masses: Vec<f64>,
    /// `E[1/h | h in bin]`.
    pub inv_means: Vec<f64>,
}

impl ChannelDiscretization {
    pub fn bins(&self) -> usize {
        self.masses.len()
    }

    /// Index of the bin `(e_{k-1}, e_k]` containing `h`; values outside the
    /// range map to the nearest end bin.
    pub fn bin_of(&self, h: f64) -> usize {
        let m = self.bins();
        // first k with edges[k + 1] >= h
        let idx = self.edges[1..].partition_point(|&e| e < h);
        idx.min(m - 1)
    }
}

/// Splits the channel range into `bins` equal-width bins.
pub fn discretize_channel(
    ch: &ChannelModel,
    bins: usize,
) -> Result<ChannelDiscretization, ModelError> {
    if bins == 0 {
        return Err(ModelError::ZeroBins);
    }
    let width = (ch.h_max - ch.h_min) / bins as f64;
    let mut edges: Vec<f64> = (0..=bins).map(|k| ch.h_min + k as f64 * width).collect();
    edges[bins] = ch.h_max;

    let mut masses = Vec::with_capacity(bins);
    let mut inv_means = Vec::with_capacity(bins);
    for k in 0..bins {
        let (lo, hi) = (edges[k], edges[k + 1]);
        let p = ch.mass(lo, hi);
        if !(p > 0.0) {
            return Err(ModelError::EmptyBin(k));
        }
        let r = (ch.inverse_mass(lo, hi) / p).clamp(1.0 / hi, 1.0 / lo);
        masses.push(p);
        inv_means.push(r);
    }
    Ok(ChannelDiscretization {
        edges,
        masses,
        inv_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Simpson quadrature, independent of the closed forms.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn paper_config_is_valid() {
        let cfg = validate_config(SystemConfig::paper_iv()).unwrap();
        assert_eq!(cfg.max_arrivals(), 2);
        assert_eq!(cfg.xi, vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn rejects_unnormalized_arrivals() {
        let mut cfg = SystemConfig::paper_iv();
        cfg.arrival = ArrivalModel::new(vec![0.5, 0.6]);
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("probabilities do not sum to 1"));
    }

    #[test]
    fn rejects_rate_below_arrivals() {
        let mut cfg = SystemConfig::paper_iv();
        cfg.max_rate = 1;
        cfg.xi = exp2_minus_one(1);
        assert_eq!(cfg.validate().unwrap_err().to_string(), "S_max < A");
    }

    #[test]
    fn rejects_bad_xi_and_channel() {
        let mut cfg = SystemConfig::paper_iv();
        cfg.xi = vec![0.0, 1.0, 1.0];
        assert!(cfg
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("xi not strictly increasing"));

        let mut cfg = SystemConfig::paper_iv();
        cfg.channel = ChannelModel::uniform(0.0, 1.0);
        assert_eq!(cfg.validate().unwrap_err().to_string(), "h_min <= 0");
    }

    #[test]
    fn mean_rate_examples() {
        assert!((mean_arrival_rate(&ArrivalModel::new(vec![0.4, 0.3, 0.3])) - 0.9).abs() < 1e-15);
        assert_eq!(mean_arrival_rate(&ArrivalModel::new(vec![1.0])), 0.0);
        assert_eq!(mean_arrival_rate(&ArrivalModel::new(vec![0.0, 0.0, 1.0])), 2.0);
    }

    #[test]
    fn two_bins_on_uniform() {
        let ch = ChannelModel::uniform(0.5, 10.0);
        let d = discretize_channel(&ch, 2).unwrap();
        assert_eq!(d.edges, vec![0.5, 5.25, 10.0]);
        assert!((d.masses[0] - 0.5).abs() < 1e-15);
        assert!((d.masses[1] - 0.5).abs() < 1e-15);

        // conditional mean of 1/h by quadrature: (1/p) int f(h)/h dh
        let f = 1.0 / 9.5;
        let oracle = simpson(|h| f / h, 0.5, 5.25, 20_000) / 0.5;
        assert!((oracle - 0.495_026_37).abs() < 1e-8);
        assert!((d.inv_means[0] - oracle).abs() < 1e-10);
    }

    #[test]
    fn single_bin_on_uniform() {
        let ch = ChannelModel::uniform(0.5, 10.0);
        let d = discretize_channel(&ch, 1).unwrap();
        assert_eq!(d.masses, vec![1.0]);
        let oracle = simpson(|h| 1.0 / (9.5 * h), 0.5, 10.0, 20_000);
        assert!((oracle - 0.315_340_24).abs() < 1e-8);
        assert!((d.inv_means[0] - oracle).abs() < 1e-10);
    }

    #[test]
    fn piecewise_density_bins() {
        let ch = ChannelModel::piecewise(vec![1.0, 2.0, 4.0], vec![0.5, 0.25]);
        ch.validate().unwrap();
        let d = discretize_channel(&ch, 3).unwrap();
        let total: f64 = d.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for k in 0..3 {
            let (lo, hi) = (d.edges[k], d.edges[k + 1]);
            let oracle = simpson(|h| ch.density_at(h) / h, lo, hi, 60_000);
            // the middle bin straddles the jump at h = 2, so Simpson is only
            // first-order accurate there
            assert!((d.inv_means[k] * d.masses[k] - oracle).abs() < 1e-5, "bin {k}");
        }
    }

    #[test]
    fn empty_bin_is_an_error() {
        let ch = ChannelModel::piecewise(vec![1.0, 2.0, 3.0], vec![1.0, 0.0]);
        ch.validate().unwrap();
        assert_eq!(discretize_channel(&ch, 2).unwrap_err(), ModelError::EmptyBin(1));
    }

    #[test]
    fn inverse_cdf_examples() {
        let ch = ChannelModel::uniform(0.5, 10.0);
        assert_eq!(ch.cdf_inverse(0.0), 0.5);
        assert_eq!(ch.cdf_inverse(1.0), 10.0);
        assert!((ch.cdf_inverse(0.5) - 5.25).abs() < 1e-12);
    }

    #[test]
    fn inverse_cdf_skips_zero_pieces() {
        let ch = ChannelModel::piecewise(vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.0, 0.5]);
        ch.validate().unwrap();
        assert_eq!(ch.cdf_inverse(0.5), 2.0);
        assert!((ch.cdf_inverse(0.75) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn bin_lookup_is_half_open() {
        let d = discretize_channel(&ChannelModel::uniform(0.5, 10.0), 2).unwrap();
        assert_eq!(d.bin_of(5.25), 0);
        assert_eq!(d.bin_of(5.250_000_1), 1);
        assert_eq!(d.bin_of(10.0), 1);
        assert_eq!(d.bin_of(0.5), 0);
    }

    fn table_channel() -> impl Strategy<Value = ChannelModel> {
        (0.1f64..2.0, prop::collection::vec((0.1f64..3.0, 0.05f64..2.0), 1..6)).prop_map(
            |(h_min, parts)| {
                let mut edges = vec![h_min];
                let mut raw = Vec::new();
                for (w, v) in parts {
                    edges.push(edges.last().unwrap() + w);
                    raw.push(v);
                }
                let total: f64 = edges.windows(2).zip(&raw).map(|(e, v)| v * (e[1] - e[0])).sum();
                let values = raw.iter().map(|v| v / total).collect();
                ChannelModel::piecewise(edges, values)
            },
        )
    }

    proptest! {
        #[test]
        fn discretization_invariants(ch in table_channel(), bins in 1usize..12) {
            let d = discretize_channel(&ch, bins).unwrap();
            let total: f64 = d.masses.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            for k in 0..bins {
                prop_assert!(d.masses[k] > 0.0);
                prop_assert!(d.inv_means[k] >= 1.0 / d.edges[k + 1]);
                prop_assert!(d.inv_means[k] <= 1.0 / d.edges[k]);
            }
            let fine = discretize_channel(&ch, 2 * bins).unwrap();
            for k in 0..bins {
                let children = fine.masses[2 * k] + fine.masses[2 * k + 1];
                prop_assert!((children - d.masses[k]).abs() < 1e-10);
            }
        }

        #[test]
        fn mean_rate_within_support(raw in prop::collection::vec(0.0f64..1.0, 1..6)) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let arr = ArrivalModel::new(raw.iter().map(|x| x / total).collect());
            let m = mean_arrival_rate(&arr);
            prop_assert!(m >= 0.0 && m <= arr.max_arrivals() as f64 + 1e-12);
        }
    }

    #[test]
    fn inverse_cdf_monotone_and_exact() {
        let ch = ChannelModel::piecewise(vec![0.5, 1.0, 4.0, 10.0], vec![0.2, 0.1, 0.1]);
        ch.validate().unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let u = i as f64 / 1000.0;
            let h = ch.cdf_inverse(u);
            assert!(h >= prev);
            assert!((ch.cdf(h) - u).abs() < 1e-12);
            prev = h;
        }
    }
}
