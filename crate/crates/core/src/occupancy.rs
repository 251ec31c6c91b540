//! Occupation-measure linear program over `(queue state, rate, channel bin)`.
//!
//! The decision variable `g[q][s][k]` is the stationary probability of seeing
//! queue length `q`, channel bin `k` and rate `s` in the same slot. Average
//! delay (Little's law) and average power are both linear in `g`:
//!
//! ```text
//! D = (1 / a_bar) * sum q g[q][s][k]
//! P = sum xi(s) r_k g[q][s][k]        r_k = E[1/h | bin k]
//! ```
//!
//! Besides the delay budget, bin masses and queue balance, the program
//! requires `sum_s g[q][s][k] = p_k * pi_q`: the channel is drawn afresh each
//! slot, so the queue length seen at a decision epoch is independent of the
//! current gain. Without these rows the program would let high backlogs
//! coincide with good channels, which no causal policy can achieve.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use thiserror::Error;

use crate::model::{ChannelDiscretization, ModelError, SystemConfig, PROB_TOL};
use crate::simplex::{self, LinearProgram, LpStatus, RowKind, SimplexError};
use crate::simulator::step;

/// LP values at or below this are treated as exact zeros.
pub const ZERO_TOL: f64 = 1e-12;
/// Tolerance for calling a policy row one-hot.
pub const ONE_HOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OccupancyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Simplex(#[from] SimplexError),
    #[error("delay bound must be positive, got {0}")]
    NonPositiveBound(f64),
    #[error("delay weight must be nonnegative, got {0}")]
    NegativeWeight(f64),
    #[error("linear program is {0:?}")]
    NotOptimal(LpStatus),
    #[error("reducible chain: closed classes {first:?} and {second:?}")]
    ReducibleChain {
        first: Vec<usize>,
        second: Vec<usize>,
    },
    #[error("policy uses inadmissible rate s = {s} in recurrent queue state q = {q}")]
    InadmissibleRate { q: usize, s: usize },
    #[error("policy shape does not match the system: {0}")]
    PolicyShape(String),
}

/// Stationary mass `g[q][s][k]` together with the model it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    cfg: SystemConfig,
    disc: ChannelDiscretization,
    values: Vec<f64>,
}

impl OccupancyMeasure {
    pub fn zeros(cfg: &SystemConfig, disc: &ChannelDiscretization) -> Self {
        let len = (cfg.buffer + 1) * (cfg.max_rate + 1) * disc.bins();
        Self {
            cfg: cfg.clone(),
            disc: disc.clone(),
            values: vec![0.0; len],
        }
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn discretization(&self) -> &ChannelDiscretization {
        &self.disc
    }

    pub fn queue_states(&self) -> usize {
        self.cfg.buffer + 1
    }

    pub fn rates(&self) -> usize {
        self.cfg.max_rate + 1
    }

    pub fn bins(&self) -> usize {
        self.disc.bins()
    }

    fn index(&self, q: usize, s: usize, k: usize) -> usize {
        (q * self.rates() + s) * self.bins() + k
    }

    pub fn get(&self, q: usize, s: usize, k: usize) -> f64 {
        self.values[self.index(q, s, k)]
    }

    pub fn set(&mut self, q: usize, s: usize, k: usize, v: f64) {
        let i = self.index(q, s, k);
        self.values[i] = v;
    }

    /// `sum_s g[q][s][k]`.
    pub fn cell_mass(&self, q: usize, k: usize) -> f64 {
        (0..self.rates()).map(|s| self.get(q, s, k)).sum()
    }

    /// Stationary probability of queue state `q`.
    pub fn queue_mass(&self, q: usize) -> f64 {
        (0..self.bins()).map(|k| self.cell_mass(q, k)).sum()
    }

    /// `sum_k g[q][s][k]`.
    pub fn rate_mass(&self, q: usize, s: usize) -> f64 {
        (0..self.bins()).map(|k| self.get(q, s, k)).sum()
    }

    /// Worst violation of the measure invariants: nonnegativity, bin masses,
    /// queue balance, queue/channel independence and structural zeros.
    pub fn max_residual(&self) -> f64 {
        let (qn, sn, m) = (self.queue_states(), self.rates(), self.bins());
        let mut worst = self.values.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        for k in 0..m {
            let mass: f64 = (0..qn).map(|q| self.cell_mass(q, k)).sum();
            worst = worst.max((mass - self.disc.masses[k]).abs());
        }
        for q in 0..qn {
            let pi = self.queue_mass(q);
            for k in 0..m {
                worst = worst.max((self.cell_mass(q, k) - self.disc.masses[k] * pi).abs());
            }
            for s in 0..sn {
                if !self.cfg.admissible(q, s) {
                    worst = worst.max(self.rate_mass(q, s).abs());
                }
            }
        }
        for r in balance_residuals(&self.cfg, |q, s| self.rate_mass(q, s)) {
            worst = worst.max(r.abs());
        }
        worst
    }
}

/// `inflow(q) - outflow(q)` for every queue state, given per-(q, s) masses.
pub(crate) fn balance_residuals(cfg: &SystemConfig, mass: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let qn = cfg.buffer + 1;
    let mut res = vec![0.0; qn];
    for q in 0..qn {
        for s in 0..=cfg.max_rate {
            let g = mass(q, s);
            if g == 0.0 {
                continue;
            }
            res[q] -= g;
            for (a, &alpha) in cfg.arrival.alphas.iter().enumerate() {
                res[step(q, a, s, cfg.buffer)] += alpha * g;
            }
        }
    }
    res
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasureMetrics {
    /// Average delay in slots.
    pub delay: f64,
    /// Average power in energy per slot.
    pub power: f64,
}

/// Delay by Little's law and average power of a measure.
pub fn evaluate_measure(m: &OccupancyMeasure) -> MeasureMetrics {
    let a_bar = m.cfg.mean_arrival_rate();
    let mut queue = 0.0;
    let mut power = 0.0;
    for q in 0..m.queue_states() {
        for s in 0..m.rates() {
            for k in 0..m.bins() {
                let g = m.get(q, s, k);
                queue += q as f64 * g;
                power += m.cfg.xi[s] * m.disc.inv_means[k] * g;
            }
        }
    }
    let delay = if a_bar > 0.0 { queue / a_bar } else { 0.0 };
    MeasureMetrics { delay, power }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    Power,
    Delay,
    Weighted(f64),
}

/// The occupation-measure program in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyLp {
    pub lp: LinearProgram,
    /// `(q, s, k)` of each column, ordered q-major, then s, then k.
    pub vars: Vec<(usize, usize, usize)>,
    /// Index of the delay-budget row, if present.
    pub delay_row: Option<usize>,
}

/// Minimum-power program with an optional delay budget (`None` means no
/// budget).
pub fn build_lp(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    delay_bound: Option<f64>,
) -> Result<OccupancyLp, OccupancyError> {
    build_with(cfg, disc, Objective::Power, delay_bound)
}

fn build_with(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    objective: Objective,
    delay_bound: Option<f64>,
) -> Result<OccupancyLp, OccupancyError> {
    cfg.validate()?;
    if let Some(d) = delay_bound {
        if !(d > 0.0) {
            return Err(OccupancyError::NonPositiveBound(d));
        }
    }
    let m = disc.bins();
    let qn = cfg.buffer + 1;
    let a_bar = cfg.mean_arrival_rate();
    let delay_coeff = |q: usize| if a_bar > 0.0 { q as f64 / a_bar } else { 0.0 };

    let mut vars = Vec::new();
    for q in 0..qn {
        for s in 0..=cfg.max_rate {
            if cfg.admissible(q, s) {
                for k in 0..m {
                    vars.push((q, s, k));
                }
            }
        }
    }
    let n = vars.len();
    let costs = vars
        .iter()
        .map(|&(q, s, k)| {
            let power = cfg.xi[s] * disc.inv_means[k];
            match objective {
                Objective::Power => power,
                Objective::Delay => delay_coeff(q),
                Objective::Weighted(lambda) => power + lambda * delay_coeff(q),
            }
        })
        .collect();
    let mut lp = LinearProgram::new(costs);

    let delay_row = match delay_bound {
        Some(d) if a_bar > 0.0 && d.is_finite() => {
            let coeffs = vars.iter().map(|&(q, _, _)| delay_coeff(q)).collect();
            Some(lp.add_row(coeffs, RowKind::Le, d))
        }
        _ => None,
    };

    for k in 0..m {
        let coeffs = vars
            .iter()
            .map(|&(_, _, kk)| if kk == k { 1.0 } else { 0.0 })
            .collect();
        lp.add_row(coeffs, RowKind::Eq, disc.masses[k]);
    }

    for target in 0..qn {
        let mut coeffs = vec![0.0; n];
        for (j, &(q, s, _)) in vars.iter().enumerate() {
            if q == target {
                coeffs[j] -= 1.0;
            }
            for (a, &alpha) in cfg.arrival.alphas.iter().enumerate() {
                // admissible (q, s) never reach the overflow clip
                if q - s + a == target {
                    coeffs[j] += alpha;
                }
            }
        }
        lp.add_row(coeffs, RowKind::Eq, 0.0);
    }

    for target in 0..qn {
        for k in 0..m {
            let coeffs = vars
                .iter()
                .map(|&(q, _, kk)| {
                    if q != target {
                        0.0
                    } else if kk == k {
                        1.0 - disc.masses[k]
                    } else {
                        -disc.masses[k]
                    }
                })
                .collect();
            lp.add_row(coeffs, RowKind::Eq, 0.0);
        }
    }

    Ok(OccupancyLp {
        lp,
        vars,
        delay_row,
    })
}

/// Result of one occupation-measure solve.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Optimal objective; NaN unless optimal.
    pub objective: f64,
    pub measure: Option<OccupancyMeasure>,
    /// Power saved per unit of extra delay budget (nonnegative), when a delay
    /// row was present.
    pub delay_dual: Option<f64>,
    /// Largest constraint violation of the returned solution.
    pub max_violation: f64,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// The measure of an optimal solution, or the status as an error.
    pub fn into_measure(self) -> Result<OccupancyMeasure, OccupancyError> {
        match self.measure {
            Some(m) => Ok(m),
            None => Err(OccupancyError::NotOptimal(self.status)),
        }
    }
}

/// Runs the simplex method on a built program.
pub fn solve_simplex(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    olp: &OccupancyLp,
) -> Result<LpSolution, OccupancyError> {
    let res = simplex::solve(&olp.lp)?;
    if res.status != LpStatus::Optimal {
        return Ok(LpSolution {
            status: res.status,
            objective: f64::NAN,
            measure: None,
            delay_dual: None,
            max_violation: f64::NAN,
        });
    }
    let mut measure = OccupancyMeasure::zeros(cfg, disc);
    let mut x = res.x.clone();
    for (j, &(q, s, k)) in olp.vars.iter().enumerate() {
        if x[j] <= ZERO_TOL {
            x[j] = 0.0;
        }
        measure.set(q, s, k, x[j]);
    }
    Ok(LpSolution {
        status: LpStatus::Optimal,
        objective: olp.lp.objective_at(&x),
        measure: Some(measure),
        delay_dual: olp.delay_row.map(|r| (-res.duals[r]).max(0.0)),
        max_violation: olp.lp.max_violation(&x),
    })
}

/// Minimum average power subject to `D <= delay_bound`. An infinite bound
/// drops the delay row; a bound below the least achievable delay yields an
/// infeasible status.
pub fn solve_constrained(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    delay_bound: f64,
) -> Result<LpSolution, OccupancyError> {
    let olp = build_lp(cfg, disc, Some(delay_bound))?;
    solve_simplex(cfg, disc, &olp)
}

/// Least achievable average delay over stationary policies.
pub fn min_delay(cfg: &SystemConfig, disc: &ChannelDiscretization) -> Result<f64, OccupancyError> {
    if cfg.mean_arrival_rate() == 0.0 {
        cfg.validate()?;
        return Ok(0.0);
    }
    let olp = build_with(cfg, disc, Objective::Delay, None)?;
    let sol = solve_simplex(cfg, disc, &olp)?;
    let m = sol.into_measure()?;
    Ok(evaluate_measure(&m).delay)
}

/// Optimal basic solution of `min P + lambda * D`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianSolution {
    pub lambda: f64,
    pub policy: Policy,
    pub measure: OccupancyMeasure,
    pub delay: f64,
    pub power: f64,
}

impl LagrangianSolution {
    pub fn value(&self) -> f64 {
        self.power + self.lambda * self.delay
    }
}

pub fn solve_lagrangian(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    lambda: f64,
) -> Result<LagrangianSolution, OccupancyError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(OccupancyError::NegativeWeight(lambda));
    }
    let olp = build_with(cfg, disc, Objective::Weighted(lambda), None)?;
    let measure = solve_simplex(cfg, disc, &olp)?.into_measure()?;
    let MeasureMetrics { delay, power } = evaluate_measure(&measure);
    Ok(LagrangianSolution {
        lambda,
        policy: extract_policy(&measure),
        measure,
        delay,
        power,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Probabilistic,
    Deterministic,
}

/// Stationary rate-selection rule on `(queue state, channel bin)`.
///
/// Rows for queue states with no stationary mass are flagged transient and
/// carry the convention `s = min(q, S_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    buffer: usize,
    max_rate: usize,
    disc: ChannelDiscretization,
    /// Indexed `q * M + k`, each a distribution over `0..=S_max`.
    rows: Vec<Vec<f64>>,
    transient: Vec<bool>,
}

impl Policy {
    /// Builds a policy from explicit rows indexed `[q][k][s]`.
    pub fn from_rows(
        cfg: &SystemConfig,
        disc: &ChannelDiscretization,
        rows: Vec<Vec<Vec<f64>>>,
        transient: Vec<Vec<bool>>,
    ) -> Result<Self, OccupancyError> {
        let (qn, m, sn) = (cfg.buffer + 1, disc.bins(), cfg.max_rate + 1);
        if rows.len() != qn || transient.len() != qn {
            return Err(OccupancyError::PolicyShape(format!("expected {qn} queue states")));
        }
        let mut flat = Vec::with_capacity(qn * m);
        let mut flags = Vec::with_capacity(qn * m);
        for (q, (row_q, tr_q)) in rows.into_iter().zip(transient).enumerate() {
            if row_q.len() != m || tr_q.len() != m {
                return Err(OccupancyError::PolicyShape(format!("q = {q}: expected {m} bins")));
            }
            for (k, (row, tr)) in row_q.into_iter().zip(tr_q).enumerate() {
                let sum: f64 = row.iter().sum();
                if row.len() != sn || row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > PROB_TOL {
                    return Err(OccupancyError::PolicyShape(format!(
                        "row (q = {q}, k = {k}) is not a distribution over {sn} rates"
                    )));
                }
                flat.push(row);
                flags.push(tr);
            }
        }
        Ok(Self {
            buffer: cfg.buffer,
            max_rate: cfg.max_rate,
            disc: disc.clone(),
            rows: flat,
            transient: flags,
        })
    }

    /// Deterministic policy `s = rule(q, k)`.
    pub fn deterministic(
        cfg: &SystemConfig,
        disc: &ChannelDiscretization,
        rule: impl Fn(usize, usize) -> usize,
    ) -> Self {
        let (qn, m, sn) = (cfg.buffer + 1, disc.bins(), cfg.max_rate + 1);
        let mut rows = Vec::with_capacity(qn * m);
        for q in 0..qn {
            for k in 0..m {
                let mut row = vec![0.0; sn];
                row[rule(q, k).min(cfg.max_rate)] = 1.0;
                rows.push(row);
            }
        }
        Self {
            buffer: cfg.buffer,
            max_rate: cfg.max_rate,
            disc: disc.clone(),
            rows,
            transient: vec![false; qn * m],
        }
    }

    pub fn discretization(&self) -> &ChannelDiscretization {
        &self.disc
    }

    pub fn queue_states(&self) -> usize {
        self.buffer + 1
    }

    pub fn bins(&self) -> usize {
        self.disc.bins()
    }

    pub fn rates(&self) -> usize {
        self.max_rate + 1
    }

    pub fn probs(&self, q: usize, k: usize) -> &[f64] {
        &self.rows[q * self.bins() + k]
    }

    pub fn is_transient(&self, q: usize, k: usize) -> bool {
        self.transient[q * self.bins() + k]
    }

    /// The rate of a one-hot row.
    pub fn rate(&self, q: usize, k: usize) -> Option<usize> {
        let row = self.probs(q, k);
        row.iter().position(|&p| p >= 1.0 - ONE_HOT_TOL)
    }

    /// Deterministic iff every non-transient row is one-hot.
    pub fn kind(&self) -> PolicyKind {
        let det = (0..self.rows.len())
            .filter(|&i| !self.transient[i])
            .all(|i| self.rows[i].iter().any(|&p| p >= 1.0 - ONE_HOT_TOL));
        if det {
            PolicyKind::Deterministic
        } else {
            PolicyKind::Probabilistic
        }
    }

    /// First non-transient row that mixes two rates, as `(q, k, s1, s2)`.
    pub fn mixed_row(&self) -> Option<(usize, usize, usize, usize)> {
        let m = self.bins();
        (0..self.rows.len()).filter(|&i| !self.transient[i]).find_map(|i| {
            let positive: Vec<usize> = (0..self.rates())
                .filter(|&s| self.rows[i][s] > ONE_HOT_TOL)
                .collect();
            (positive.len() > 1).then(|| (i / m, i % m, positive[0], positive[1]))
        })
    }
}

/// Conditional rate distribution `f(s | q, k) = g[q][s][k] / sum_x g[q][x][k]`.
pub fn extract_policy(m: &OccupancyMeasure) -> Policy {
    let (qn, sn, bins) = (m.queue_states(), m.rates(), m.bins());
    let mut rows = Vec::with_capacity(qn * bins);
    let mut transient = Vec::with_capacity(qn * bins);
    for q in 0..qn {
        for k in 0..bins {
            let total = m.cell_mass(q, k);
            let mut row = vec![0.0; sn];
            if total > 0.0 {
                for (s, p) in row.iter_mut().enumerate() {
                    *p = m.get(q, s, k) / total;
                }
                transient.push(false);
            } else {
                row[q.min(m.cfg.max_rate)] = 1.0;
                transient.push(true);
            }
            rows.push(row);
        }
    }
    Policy {
        buffer: m.cfg.buffer,
        max_rate: m.cfg.max_rate,
        disc: m.disc.clone(),
        rows,
        transient,
    }
}

/// Queue-length transition matrix induced by a bin policy.
pub fn transition_matrix(cfg: &SystemConfig, disc: &ChannelDiscretization, pol: &Policy) -> Vec<Vec<f64>> {
    let qn = cfg.buffer + 1;
    let mut p = vec![vec![0.0; qn]; qn];
    for (q, row) in p.iter_mut().enumerate() {
        for k in 0..disc.bins() {
            for (s, &f) in pol.probs(q, k).iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                for (a, &alpha) in cfg.arrival.alphas.iter().enumerate() {
                    row[step(q, a, s, cfg.buffer)] += disc.masses[k] * f * alpha;
                }
            }
        }
    }
    p
}

/// Stationary distribution of a row-stochastic matrix with a single closed
/// class. Transient states get zero mass.
pub fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>, OccupancyError> {
    let n = p.len();
    let mut graph = DiGraph::<usize, ()>::new();
    let nodes: Vec<_> = (0..n).map(|i| graph.add_node(i)).collect();
    for i in 0..n {
        for j in 0..n {
            if p[i][j] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut closed: Vec<Vec<usize>> = tarjan_scc(&graph)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|ix| graph[ix]).collect();
            c.sort_unstable();
            c
        })
        .filter(|c| {
            c.iter()
                .all(|&i| (0..n).all(|j| p[i][j] == 0.0 || c.binary_search(&j).is_ok()))
        })
        .collect();
    closed.sort();
    if closed.len() > 1 {
        return Err(OccupancyError::ReducibleChain {
            first: closed[0].clone(),
            second: closed[1].clone(),
        });
    }
    let class = &closed[0];
    let c = class.len();
    // pi (P_C - I) = 0 with the last equation replaced by sum pi = 1
    let mut a = DMatrix::from_fn(c, c, |r, col| {
        let v = p[class[col]][class[r]];
        if r == col {
            v - 1.0
        } else {
            v
        }
    });
    let mut b = DVector::zeros(c);
    for col in 0..c {
        a[(c - 1, col)] = 1.0;
    }
    b[c - 1] = 1.0;
    let sol = a
        .lu()
        .solve(&b)
        .ok_or_else(|| OccupancyError::PolicyShape("singular stationary system".into()))?;
    let mut pi = vec![0.0; n];
    for (idx, &state) in class.iter().enumerate() {
        pi[state] = sol[idx].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

/// Occupation measure generated by running `pol` forever.
pub fn policy_to_measure(
    cfg: &SystemConfig,
    disc: &ChannelDiscretization,
    pol: &Policy,
) -> Result<OccupancyMeasure, OccupancyError> {
    cfg.validate()?;
    if pol.queue_states() != cfg.buffer + 1 || pol.rates() != cfg.max_rate + 1 || pol.bins() != disc.bins() {
        return Err(OccupancyError::PolicyShape(
            "policy dimensions differ from the system".into(),
        ));
    }
    let pi = stationary_distribution(&transition_matrix(cfg, disc, pol))?;
    let mut m = OccupancyMeasure::zeros(cfg, disc);
    for (q, &pq) in pi.iter().enumerate() {
        if pq == 0.0 {
            continue;
        }
        for k in 0..disc.bins() {
            for (s, &f) in pol.probs(q, k).iter().enumerate() {
                if f > 0.0 {
                    if !cfg.admissible(q, s) {
                        return Err(OccupancyError::InadmissibleRate { q, s });
                    }
                    m.set(q, s, k, pq * disc.masses[k] * f);
                }
            }
        }
    }
    Ok(m)
}
