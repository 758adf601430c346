//! Dense-tableau primal simplex for `min c'x  s.t.  Ax = b, x >= 0`.
//!
//! Pivoting follows Bland's rule: the entering column is the lowest-indexed
//! one with a negative reduced cost, and ratio-test ties leave by the
//! lowest-indexed basic variable. This terminates on degenerate problems and
//! makes the returned vertex a deterministic function of the input.

use crate::error::{Error, Result};

/// Absolute tolerance for pivot elements and primal feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;
/// Reduced costs above `-OPTIMALITY_TOL` count as nonnegative.
pub const OPTIMALITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub basis: Vec<usize>,
    pub pivots: usize,
}

/// Equality-form problem with a dense row-major constraint matrix.
#[derive(Debug, Clone)]
pub struct StandardFormLp {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl StandardFormLp {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let rows = b.len();
        let cols = c.len();
        if a.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "constraint matrix has {} entries, expected {}x{}",
                a.len(),
                rows,
                cols
            )));
        }
        Ok(StandardFormLp { rows, cols, a, b, c })
    }

    /// Runs the simplex method from the given primal-feasible basis.
    pub fn solve_from(&self, basis: Vec<usize>) -> Result<LpSolution> {
        Tableau::new(self, basis)?.run()
    }
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows + 1` rows of `cols + 1` entries; the last row holds reduced costs
    /// and the last column holds the basic solution.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn new(lp: &StandardFormLp, basis: Vec<usize>) -> Result<Self> {
        if basis.len() != lp.rows {
            return Err(Error::Dimension(format!(
                "basis has {} columns for {} constraints",
                basis.len(),
                lp.rows
            )));
        }
        let w = lp.cols + 1;
        let mut t = vec![0.0; (lp.rows + 1) * w];
        for i in 0..lp.rows {
            t[i * w..i * w + lp.cols].copy_from_slice(&lp.a[i * lp.cols..(i + 1) * lp.cols]);
            t[i * w + lp.cols] = lp.b[i];
        }
        t[lp.rows * w..lp.rows * w + lp.cols].copy_from_slice(&lp.c);
        let mut tab = Tableau {
            rows: lp.rows,
            cols: lp.cols,
            t,
            basis: basis.clone(),
        };
        for (i, &j) in basis.iter().enumerate() {
            if j >= lp.cols || tab.at(i, j).abs() <= FEASIBILITY_TOL {
                return Err(Error::Numerical(format!(
                    "initial basis column {j} is not usable in row {i}"
                )));
            }
            tab.pivot(i, j);
        }
        if let Some(i) = (0..tab.rows).find(|&i| tab.rhs(i) < -FEASIBILITY_TOL) {
            return Err(Error::Numerical(format!(
                "initial basis is infeasible in row {i} (value {})",
                tab.rhs(i)
            )));
        }
        Ok(tab)
    }

    #[inline]
    fn width(&self) -> usize {
        self.cols + 1
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width() + j]
    }

    #[inline]
    fn rhs(&self, i: usize) -> f64 {
        self.at(i, self.cols)
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let w = self.width();
        let p = self.t[r * w + j];
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v /= p;
        }
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[j];
            if f != 0.0 {
                for (x, y) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * y;
                }
                row[j] = 0.0;
            }
        };
        before.chunks_exact_mut(w).for_each(eliminate);
        after.chunks_exact_mut(w).for_each(eliminate);
        self.basis[r] = j;
    }

    fn entering(&self) -> Option<usize> {
        let cost_row = self.rows;
        (0..self.cols).find(|&j| self.at(cost_row, j) < -OPTIMALITY_TOL)
    }

    fn leaving(&self, j: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.rows {
            let a = self.at(i, j);
            if a <= FEASIBILITY_TOL {
                continue;
            }
            let ratio = self.rhs(i).max(0.0) / a;
            best = match best {
                None => Some((i, ratio)),
                Some((k, r)) => {
                    let tie = (ratio - r).abs() <= FEASIBILITY_TOL * (1.0 + r.abs());
                    if (tie && self.basis[i] < self.basis[k]) || (!tie && ratio < r) {
                        Some((i, ratio))
                    } else {
                        Some((k, r))
                    }
                }
            };
        }
        best.map(|(i, _)| i)
    }

    fn run(mut self) -> Result<LpSolution> {
        let max_pivots = 50 * (self.rows + self.cols) + 1000;
        let mut pivots = 0;
        while let Some(j) = self.entering() {
            let Some(r) = self.leaving(j) else {
                return Err(Error::Numerical(format!("objective unbounded along column {j}")));
            };
            self.pivot(r, j);
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::SolverFailure {
                    message: format!("simplex exceeded {max_pivots} pivots"),
                    best: self.solution(),
                });
            }
        }
        let x = self.solution();
        let objective = -self.at(self.rows, self.cols);
        Ok(LpSolution {
            x,
            objective,
            basis: self.basis,
            pivots,
        })
    }

    fn solution(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.cols];
        for (i, &j) in self.basis.iter().enumerate() {
            x[j] = self.rhs(i).max(0.0);
        }
        x
    }
}
