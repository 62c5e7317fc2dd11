//! Dense two-phase simplex for small linear programs in standard form
//! `min cᵀx  s.t.  Ax = b, x ≥ 0`, using Bland's rule so it cannot cycle.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-10;
const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Primal solution (meaningful when optimal).
    pub x: DVector<f64>,
    pub objective: f64,
    /// Dual values `y` with `Aᵀy ≤ c` at optimality.
    pub duals: DVector<f64>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    rhs: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.rows[r][c];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for (v, pr) in row.iter_mut().zip(&pivot_row) {
                        *v -= f * pr;
                    }
                    row[c] = 0.0;
                }
            }
        }
        let f = self.cost[c];
        if f != 0.0 {
            for (v, pr) in self.cost.iter_mut().zip(&pivot_row) {
                *v -= f * pr;
            }
            self.cost[c] = 0.0;
        }
        self.basis[r] = c;
    }

    /// Runs Bland's-rule pivots over columns `0..allowed`. Returns `false`
    /// when the objective is unbounded below.
    fn run(&mut self, allowed: usize, max_iter: usize) -> Result<bool> {
        for _ in 0..max_iter {
            let Some(enter) = (0..allowed).find(|&j| self.cost[j] < -PIVOT_TOL) else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                let a = row[enter];
                if a > PIVOT_TOL {
                    let ratio = row[self.rhs] / a;
                    let better = match leave {
                        None => true,
                        Some((l, best)) => {
                            ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[i] < self.basis[l])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None => return Ok(false),
            }
        }
        Err(Error::Indeterminate(format!("simplex did not terminate within {max_iter} pivots")))
    }
}

/// Solves `min cᵀx s.t. Ax = b, x ≥ 0`.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<LpSolution> {
    let (m, n) = a.shape();
    if b.len() != m || c.len() != n {
        return Err(Error::DimensionMismatch { expected: m, got: b.len() });
    }
    if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Indeterminate("linear program has non-finite data".into()));
    }
    let sign: Vec<f64> = b.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
    let width = n + m + 1;
    let rhs = n + m;
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut row = vec![0.0; width];
            for j in 0..n {
                row[j] = sign[i] * a[(i, j)];
            }
            row[n + i] = 1.0;
            row[rhs] = sign[i] * b[i];
            row
        })
        .collect();
    // Phase one: minimize the sum of artificials.
    let mut cost = vec![0.0; width];
    for row in &rows {
        for j in 0..n {
            cost[j] -= row[j];
        }
        cost[rhs] -= row[rhs];
    }
    let mut t = Tableau { rows, cost, basis: (n..n + m).collect(), rhs };
    let max_iter = 50 * (n + m) + 1000;
    t.run(n, max_iter)?;
    let infeasibility = -t.cost[rhs];
    if infeasibility > FEASIBILITY_TOL * (1.0 + b.amax()) {
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: DVector::zeros(n),
            objective: f64::NAN,
            duals: DVector::zeros(m),
        });
    }
    // Drive remaining artificials out of the basis where possible.
    for r in 0..m {
        if t.basis[r] >= n {
            if let Some(j) = (0..n).find(|&j| t.rows[r][j].abs() > 1e-8) {
                t.pivot(r, j);
            }
        }
    }
    // Phase two.
    let mut cost = vec![0.0; width];
    cost[..n].copy_from_slice(c.as_slice());
    for (i, &bj) in t.basis.iter().enumerate() {
        let cb = if bj < n { c[bj] } else { 0.0 };
        if cb != 0.0 {
            for (v, tv) in cost.iter_mut().zip(&t.rows[i]) {
                *v -= cb * tv;
            }
        }
    }
    t.cost = cost;
    if !t.run(n, max_iter)? {
        return Ok(LpSolution {
            status: LpStatus::Unbounded,
            x: DVector::zeros(n),
            objective: f64::NEG_INFINITY,
            duals: DVector::zeros(m),
        });
    }
    let mut x = DVector::zeros(n);
    for (i, &bj) in t.basis.iter().enumerate() {
        if bj < n {
            x[bj] = t.rows[i][rhs].max(0.0);
        }
    }
    // Reduced cost of artificial i is -y'_i for the sign-adjusted rows.
    let duals = DVector::from_iterator(m, (0..m).map(|i| -t.cost[n + i] * sign[i]));
    Ok(LpSolution { status: LpStatus::Optimal, objective: c.dot(&x), x, duals })
}

/// Whether `{x ≥ 0 : Ax = b}` is non-empty.
pub fn feasible(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<bool> {
    let c = DVector::zeros(a.ncols());
    Ok(solve(a, b, &c)?.status != LpStatus::Infeasible)
}
