//! Dense two-phase primal simplex with Bland's rule.
//!
//! Problems have the form
//!
//! ```text
//! minimize    c' x
//! subject to  a_i' x {<=, =, >=} b_i   for every row i
//!             x >= 0
//! ```
//!
//! Bland's rule is used for every pivot, so degenerate problems cannot cycle.
//! Equality rows that turn out to be linear combinations of the others are
//! detected at the end of phase one and dropped. Once the optimal basis is
//! known, primal values and row duals are recomputed from the original data
//! with an LU factorization of the basis matrix.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Reduced costs above `-OPT_TOL` count as nonnegative.
pub const OPT_TOL: f64 = 1e-9;
/// Smallest pivot magnitude accepted in the ratio test.
pub const PIVOT_TOL: f64 = 1e-9;
/// Phase-one objective above this means the problem is infeasible.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub kind: RowKind,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub status: LpStatus,
    /// Objective value; meaningful only when optimal.
    pub objective: f64,
    /// Primal solution; empty unless optimal.
    pub x: Vec<f64>,
    /// `d objective / d rhs_i` for each row; zero for rows dropped as
    /// redundant. Empty unless optimal.
    pub duals: Vec<f64>,
    /// Original row indices found to be redundant.
    pub redundant_rows: Vec<usize>,
    pub pivots: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimplexError {
    #[error("row {row} has {got} coefficients, expected {expected}")]
    Shape { row: usize, got: usize, expected: usize },
    #[error("non-finite coefficient in the problem data")]
    NonFinite,
    #[error("pivot limit of {0} reached")]
    PivotLimit(usize),
}

impl LinearProgram {
    pub fn new(objective: Vec<f64>) -> Self {
        Self {
            objective,
            rows: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<f64>, kind: RowKind, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, kind, rhs });
        self.rows.len() - 1
    }

    /// Largest absolute violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().map(|&v| (-v).max(0.0)).fold(0.0, f64::max);
        for row in &self.rows {
            let lhs: f64 = row.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let viol = match row.kind {
                RowKind::Le => (lhs - row.rhs).max(0.0),
                RowKind::Ge => (row.rhs - lhs).max(0.0),
                RowKind::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn check(&self) -> Result<(), SimplexError> {
        let n = self.num_vars();
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(SimplexError::NonFinite);
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(SimplexError::Shape {
                    row: i,
                    got: row.coeffs.len(),
                    expected: n,
                });
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(SimplexError::NonFinite);
            }
        }
        Ok(())
    }
}

/// Column roles in the standard-form tableau.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Col {
    Structural,
    Slack,
    Artificial,
}

struct Tableau {
    /// `rows x (cols + 1)`, last column is the right-hand side.
    t: Vec<Vec<f64>>,
    /// Reduced-cost row, last entry is minus the objective value.
    z: Vec<f64>,
    basis: Vec<usize>,
    /// Original row index of each tableau row.
    origin: Vec<usize>,
    cols: usize,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let width = self.cols + 1;
        let p = self.t[r][c];
        for j in 0..width {
            self.t[r][j] /= p;
        }
        self.t[r][c] = 1.0;
        let pivot_row = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[c];
            if f != 0.0 {
                for j in 0..width {
                    row[j] -= f * pivot_row[j];
                }
                row[c] = 0.0;
            }
        }
        let f = self.z[c];
        if f != 0.0 {
            for j in 0..width {
                self.z[j] -= f * pivot_row[j];
            }
            self.z[c] = 0.0;
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let width = self.cols + 1;
        self.z = costs.to_vec();
        self.z.push(0.0);
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = costs[b];
            if cb != 0.0 {
                for j in 0..width {
                    self.z[j] -= cb * self.t[i][j];
                }
            }
        }
    }

    /// Runs Bland-rule pivots until optimal. Returns `false` on an unbounded
    /// ray.
    fn optimize(&mut self, allowed: &[bool], limit: usize) -> Result<bool, SimplexError> {
        loop {
            let entering = (0..self.cols).find(|&j| allowed[j] && self.z[j] < -OPT_TOL);
            let Some(c) = entering else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for i in 0..self.t.len() {
                let a = self.t[i][c];
                if a > PIVOT_TOL {
                    let ratio = self.t[i][self.cols] / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if ratio < br && !tie
                                || tie && self.basis[i] < self.basis[bi]
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = best else {
                return Ok(false);
            };
            if self.pivots >= limit {
                return Err(SimplexError::PivotLimit(limit));
            }
            self.pivot(r, c);
        }
    }
}

/// Solves `lp` with the two-phase primal simplex method.
pub fn solve(lp: &LinearProgram) -> Result<SimplexResult, SimplexError> {
    lp.check()?;
    let n = lp.num_vars();
    let m = lp.rows.len();

    // Normalize to nonnegative right-hand sides.
    let mut sign = vec![1.0; m];
    let mut kinds = Vec::with_capacity(m);
    for (i, row) in lp.rows.iter().enumerate() {
        let mut kind = row.kind;
        if row.rhs < 0.0 {
            sign[i] = -1.0;
            kind = match kind {
                RowKind::Le => RowKind::Ge,
                RowKind::Ge => RowKind::Le,
                RowKind::Eq => RowKind::Eq,
            };
        }
        kinds.push(kind);
    }

    let mut roles = vec![Col::Structural; n];
    let mut slack_of = vec![None; m];
    for (i, kind) in kinds.iter().enumerate() {
        if *kind != RowKind::Eq {
            slack_of[i] = Some(roles.len());
            roles.push(Col::Slack);
        }
    }
    let mut art_of = vec![None; m];
    for (i, kind) in kinds.iter().enumerate() {
        if *kind != RowKind::Le {
            art_of[i] = Some(roles.len());
            roles.push(Col::Artificial);
        }
    }
    let cols = roles.len();

    let mut t = vec![vec![0.0; cols + 1]; m];
    let mut basis = vec![0; m];
    for (i, row) in lp.rows.iter().enumerate() {
        for (j, &a) in row.coeffs.iter().enumerate() {
            t[i][j] = sign[i] * a;
        }
        t[i][cols] = sign[i] * row.rhs;
        if let Some(s) = slack_of[i] {
            t[i][s] = if kinds[i] == RowKind::Le { 1.0 } else { -1.0 };
        }
        basis[i] = match (kinds[i], art_of[i]) {
            (RowKind::Le, _) => slack_of[i].unwrap(),
            (_, Some(a)) => {
                t[i][a] = 1.0;
                a
            }
            _ => unreachable!(),
        };
    }
    // Standard-form copy, used for the final refinement.
    let standard: Vec<Vec<f64>> = t.clone();

    let mut tab = Tableau {
        t,
        z: Vec::new(),
        basis,
        origin: (0..m).collect(),
        cols,
        pivots: 0,
    };
    let limit = 200 * (cols + m + 10);

    // Phase one.
    let phase1: Vec<f64> = roles
        .iter()
        .map(|r| if *r == Col::Artificial { 1.0 } else { 0.0 })
        .collect();
    tab.set_costs(&phase1);
    let all = vec![true; cols];
    tab.optimize(&all, limit)?;
    let infeasibility = -tab.z[cols];
    if infeasibility > FEAS_TOL {
        return Ok(SimplexResult {
            status: LpStatus::Infeasible,
            objective: f64::NAN,
            x: Vec::new(),
            duals: Vec::new(),
            redundant_rows: Vec::new(),
            pivots: tab.pivots,
        });
    }

    // Drive remaining artificials out of the basis, dropping redundant rows.
    let mut redundant = Vec::new();
    let mut i = 0;
    while i < tab.t.len() {
        if roles[tab.basis[i]] == Col::Artificial {
            let replacement =
                (0..cols).find(|&j| roles[j] != Col::Artificial && tab.t[i][j].abs() > PIVOT_TOL);
            match replacement {
                Some(j) => {
                    tab.pivot(i, j);
                    i += 1;
                }
                None => {
                    redundant.push(tab.origin[i]);
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    tab.origin.remove(i);
                }
            }
        } else {
            i += 1;
        }
    }
    redundant.sort_unstable();

    // Phase two.
    let mut costs = vec![0.0; cols];
    costs[..n].copy_from_slice(&lp.objective);
    tab.set_costs(&costs);
    let allowed: Vec<bool> = roles.iter().map(|r| *r != Col::Artificial).collect();
    if !tab.optimize(&allowed, limit)? {
        return Ok(SimplexResult {
            status: LpStatus::Unbounded,
            objective: f64::NAN,
            x: Vec::new(),
            duals: Vec::new(),
            redundant_rows: redundant,
            pivots: tab.pivots,
        });
    }

    let mut x_std = vec![0.0; cols];
    for (i, &b) in tab.basis.iter().enumerate() {
        x_std[b] = tab.t[i][cols];
    }
    // Fallback duals from the reduced-cost row: each kept row owns a +e_i
    // column (slack or artificial) with zero phase-two cost, so y_i = -z_j.
    let mut y_kept: Vec<f64> = tab
        .origin
        .iter()
        .map(|&orig| {
            let col = art_of[orig].or(slack_of[orig]).unwrap();
            -tab.z[col]
        })
        .collect();

    // Refine from the original data.
    let k = tab.basis.len();
    let b_mat = DMatrix::from_fn(k, k, |r, c| standard[tab.origin[r]][tab.basis[c]]);
    let rhs = DVector::from_fn(k, |r, _| standard[tab.origin[r]][cols]);
    let cb = DVector::from_fn(k, |r, _| costs[tab.basis[r]]);
    let lu = b_mat.clone().lu();
    if let Some(xb) = lu.solve(&rhs) {
        if xb.iter().all(|v| v.is_finite()) {
            for (r, &b) in tab.basis.iter().enumerate() {
                x_std[b] = xb[r].max(0.0);
            }
        }
    }
    if let Some(y) = b_mat.transpose().lu().solve(&cb) {
        if y.iter().all(|v| v.is_finite()) {
            y_kept = y.iter().copied().collect();
        }
    }

    let x: Vec<f64> = x_std[..n].to_vec();
    let mut duals = vec![0.0; m];
    for (r, &orig) in tab.origin.iter().enumerate() {
        duals[orig] = sign[orig] * y_kept[r];
    }
    Ok(SimplexResult {
        status: LpStatus::Optimal,
        objective: lp.objective_at(&x),
        x,
        duals,
        redundant_rows: redundant,
        pivots: tab.pivots,
    })
}
