//! Dense two-phase simplex for the small equilibrium-polishing programs.
//!
//! Solves `min cᵀx` subject to `A_eq x = b_eq`, `A_le x ≤ b_le`, `x ≥ 0`.
//! Bland's rule is used throughout: the programs arising from degenerate
//! games are highly degenerate and would otherwise cycle.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, PartialEq)]
pub(crate) enum LpOutcome {
    Optimal { x: DVector<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

pub(crate) struct Lp {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_le: DMatrix<f64>,
    pub b_le: DVector<f64>,
}

struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    /// Columns allowed to enter the basis.
    allowed: Vec<bool>,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.basis.len()
    }

    fn rhs_col(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let p = self.t[(row, col)];
        for v in self.t.row_mut(row).iter_mut() {
            *v /= p;
        }
        for r in 0..self.t.nrows() {
            if r != row {
                let factor = self.t[(r, col)];
                if factor != 0.0 {
                    for k in 0..self.t.ncols() {
                        let delta = factor * self.t[(row, k)];
                        self.t[(r, k)] -= delta;
                    }
                    self.t[(r, col)] = 0.0;
                }
            }
        }
        self.basis[row] = col;
    }

    /// Minimizes the objective held in the last row (as reduced costs).
    fn run(&mut self) -> bool {
        let obj = self.rows();
        let rhs = self.rhs_col();
        loop {
            let entering = (0..rhs).find(|&j| self.allowed[j] && self.t[(obj, j)] < -PIVOT_TOL);
            let Some(col) = entering else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..obj {
                let a = self.t[(r, col)];
                if a > PIVOT_TOL {
                    let ratio = self.t[(r, rhs)] / a;
                    let better = match leave {
                        None => true,
                        Some((lr, best)) => {
                            ratio < best - 1e-12 || (ratio <= best + 1e-12 && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return false;
            };
            self.pivot(row, col);
        }
    }

    fn set_objective(&mut self, cost: &[f64]) {
        let obj = self.rows();
        let rhs = self.rhs_col();
        for j in 0..=rhs {
            self.t[(obj, j)] = if j < cost.len() { cost[j] } else { 0.0 };
        }
        for r in 0..obj {
            let cb = self.t[(obj, self.basis[r])];
            if cb != 0.0 {
                for j in 0..=rhs {
                    let delta = cb * self.t[(r, j)];
                    self.t[(obj, j)] -= delta;
                }
            }
        }
    }
}

impl Lp {
    pub(crate) fn solve(&self) -> LpOutcome {
        let nx = self.c.len();
        let n_eq = self.a_eq.nrows();
        let n_le = self.a_le.nrows();
        let m = n_eq + n_le;
        // Columns: x, slacks (one per ≤ row), artificials (one per row), rhs.
        let n_cols = nx + n_le + m + 1;
        let mut t = DMatrix::<f64>::zeros(m + 1, n_cols);
        for r in 0..m {
            let (coeffs, b, slack) = if r < n_eq {
                (self.a_eq.row(r).clone_owned(), self.b_eq[r], None)
            } else {
                (self.a_le.row(r - n_eq).clone_owned(), self.b_le[r - n_eq], Some(nx + r - n_eq))
            };
            let sign = if b < 0.0 { -1.0 } else { 1.0 };
            for j in 0..nx {
                t[(r, j)] = sign * coeffs[j];
            }
            if let Some(s) = slack {
                t[(r, s)] = sign;
            }
            t[(r, nx + n_le + r)] = 1.0;
            t[(r, n_cols - 1)] = sign * b;
        }
        let mut tab = Tableau {
            t,
            basis: (0..m).map(|r| nx + n_le + r).collect(),
            allowed: vec![true; n_cols - 1],
        };

        let mut phase1 = vec![0.0; n_cols - 1];
        for r in 0..m {
            phase1[nx + n_le + r] = 1.0;
        }
        tab.set_objective(&phase1);
        tab.run();
        if -tab.t[(m, n_cols - 1)] > FEAS_TOL {
            return LpOutcome::Infeasible;
        }
        // Drive artificials at zero out of the basis where possible.
        for r in 0..m {
            if tab.basis[r] >= nx + n_le {
                if let Some(col) = (0..nx + n_le).find(|&j| tab.t[(r, j)].abs() > 1e-9) {
                    tab.pivot(r, col);
                }
            }
        }
        for j in nx + n_le..n_cols - 1 {
            tab.allowed[j] = false;
        }

        let mut phase2 = vec![0.0; n_cols - 1];
        phase2[..nx].copy_from_slice(self.c.as_slice());
        tab.set_objective(&phase2);
        if !tab.run() {
            return LpOutcome::Unbounded;
        }
        let mut x = DVector::<f64>::zeros(nx);
        for (r, &b) in tab.basis.iter().enumerate() {
            if b < nx {
                x[b] = tab.t[(r, n_cols - 1)].max(0.0);
            }
        }
        let objective = self.c.dot(&x);
        LpOutcome::Optimal { x, objective }
    }
}
