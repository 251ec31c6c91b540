//! Oracles written without the library's solvers.
#![allow(dead_code)]

use detsched::simplex::{LinearProgram, RowKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Row-reduces `[a | b]`, dropping dependent rows. `None` if inconsistent.
fn independent_rows(a: &[Vec<f64>], b: &[f64]) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let cols = a.first().map_or(0, |r| r.len());
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, &v)| {
        let mut row = r.clone();
        row.push(v);
        row
    }).collect();
    let mut keep = Vec::new();
    let mut lead = 0;
    let mut r = 0;
    let mut order: Vec<usize> = (0..m.len()).collect();
    while r < m.len() && lead < cols {
        let piv = (r..m.len()).max_by(|&i, &j| m[i][lead].abs().total_cmp(&m[j][lead].abs())).unwrap();
        if m[piv][lead].abs() < 1e-10 {
            lead += 1;
            continue;
        }
        m.swap(r, piv);
        order.swap(r, piv);
        for i in 0..m.len() {
            if i != r {
                let f = m[i][lead] / m[r][lead];
                for c in 0..=cols {
                    m[i][c] -= f * m[r][c];
                }
            }
        }
        keep.push(order[r]);
        r += 1;
        lead += 1;
    }
    if m[r..].iter().any(|row| row[cols].abs() > 1e-9) {
        return None;
    }
    keep.sort();
    Some((keep.iter().map(|&i| a[i].clone()).collect(), keep.iter().map(|&i| b[i]).collect()))
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for j in start..n {
            if n - j < k - cur.len() {
                break;
            }
            cur.push(j);
            go(j + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::new(), f);
}

/// Optimum of a bounded LP over all basic feasible solutions; `None` when
/// infeasible.
pub fn brute_force_optimum(lp: &LinearProgram) -> Option<f64> {
    let n = lp.objective.len();
    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b = Vec::new();
    let slacks = lp.rows.iter().filter(|r| r.kind != RowKind::Eq).count();
    let mut t = 0;
    for r in &lp.rows {
        let mut row = r.coeffs.clone();
        row.resize(n + slacks, 0.0);
        match r.kind {
            RowKind::Le => {
                row[n + t] = 1.0;
                t += 1;
            }
            RowKind::Ge => {
                row[n + t] = -1.0;
                t += 1;
            }
            RowKind::Eq => {}
        }
        a.push(row);
        b.push(r.rhs);
    }
    let mut c = lp.objective.clone();
    c.resize(n + slacks, 0.0);
    let (a, b) = independent_rows(&a, &b)?;
    let m = b.len();
    if m == 0 {
        // only x >= 0: the origin is a vertex
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    combinations(n + slacks, m, &mut |basis| {
        let sq: Vec<Vec<f64>> = a.iter().map(|row| basis.iter().map(|&j| row[j]).collect()).collect();
        if let Some(x) = gauss_solve(sq, b.clone()) {
            if x.iter().all(|&v| v >= -1e-9) {
                let val: f64 = basis.iter().zip(&x).map(|(&j, v)| c[j] * v).sum();
                best = Some(best.map_or(val, |bv: f64| bv.min(val)));
            }
        }
    });
    best
}

/// Stationary law of a row-stochastic matrix with one closed class;
/// `None` when the system is singular (several closed classes).
pub fn stationary(p: &[Vec<f64>]) -> Option<Vec<f64>> {
    let n = p.len();
    // pi (P - I) = 0 with the last equation replaced by sum(pi) = 1
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[j][i] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    a[n - 1] = vec![1.0; n];
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    gauss_solve(a, b)
}

/// The small test system: Q = 2, one arrival with probability 1/2, at most
/// one packet per slot, xi = (0, 1), gains uniform on (1, 2].
pub struct Tiny {
    pub bins: usize,
}

impl Tiny {
    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|k| 1.0 + k as f64 / self.bins as f64).collect()
    }

    /// `E[1/h | bin k]` for the uniform density on (1, 2].
    pub fn inv_mean(&self, k: usize) -> f64 {
        let e = self.edges();
        self.bins as f64 * (e[k + 1] / e[k]).ln()
    }

    /// `(D, P)` of the deterministic rule `s = rule[k]` in state 1; state 0
    /// idles and state 2 sends one packet.
    pub fn evaluate(&self, rule: &[usize]) -> Option<(f64, f64)> {
        let pk = 1.0 / self.bins as f64;
        let mut p = vec![vec![0.0; 3]; 3];
        for q in 0..3usize {
            for k in 0..self.bins {
                let s = match q {
                    0 => 0,
                    1 => rule[k],
                    _ => 1,
                };
                for a in 0..2usize {
                    let next = (q - s + a).min(2);
                    p[q][next] += 0.5 * pk;
                }
            }
        }
        let pi = stationary(&p)?;
        let delay = (pi[1] + 2.0 * pi[2]) / 0.5;
        let mut power = pi[2] * (0..self.bins).map(|k| pk * self.inv_mean(k)).sum::<f64>();
        for k in 0..self.bins {
            if rule[k] == 1 {
                power += pi[1] * pk * self.inv_mean(k);
            }
        }
        Some((delay, power))
    }

    /// Every deterministic policy's `(D, P)`.
    pub fn all_points(&self) -> Vec<(f64, f64)> {
        (0..1usize << self.bins)
            .filter_map(|mask| {
                let rule: Vec<usize> = (0..self.bins).map(|k| (mask >> k) & 1).collect();
                self.evaluate(&rule)
            })
            .collect()
    }
}

/// Lower-left convex hull corners, sorted by delay, power strictly falling.
pub fn lower_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if hull.last().is_some_and(|l| p.1 >= l.1 - 1e-12) {
            continue;
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross <= 1e-12 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Lower hull evaluated at `d`; flat past the last corner.
pub fn hull_value(hull: &[(f64, f64)], d: f64) -> f64 {
    if d >= hull[hull.len() - 1].0 {
        return hull[hull.len() - 1].1;
    }
    let i = hull.iter().rposition(|p| p.0 <= d).expect("d above least delay");
    let (a, b) = (hull[i], hull[i + 1]);
    a.1 + (b.1 - a.1) * (d - a.0) / (b.0 - a.0)
}

/// Random LP kept bounded by `sum x <= 10`. Some rows are copies or have a
/// zero right-hand side so that degenerate vertices show up.
pub fn random_program(rng: &mut ChaCha8Rng) -> LinearProgram {
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(1..=3);
    let mut lp = LinearProgram::new((0..n).map(|_| rng.gen_range(-4i32..=4) as f64).collect());
    for _ in 0..m {
        let coeffs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3i32..=3) as f64).collect();
        let kind = [RowKind::Le, RowKind::Ge, RowKind::Eq][rng.gen_range(0..3)];
        let rhs = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(-3i32..=5) as f64 };
        lp.add_row(coeffs.clone(), kind, rhs);
        if rng.gen_bool(0.15) {
            lp.add_row(coeffs, kind, rhs);
        }
    }
    lp.add_row(vec![1.0; n], RowKind::Le, 10.0);
    lp
}

