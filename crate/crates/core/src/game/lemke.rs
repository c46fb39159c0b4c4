//! Lemke–Howson complementary pivoting with lexicographic ratio tests, so
//! degenerate games (tied payoffs are common in loss-table games) cannot
//! cycle.
//!
//! Row player payoffs `A` (rows), column player payoffs `B`. After shifting
//! both to be positive, the polytopes are
//! `P = {x ≥ 0 : Bᵀx ≤ 1}` and `Q = {y ≥ 0 : Ay ≤ 1}`; label `i < m` is row
//! `i`, label `m + j` is column `j`.

use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-12;

/// One side's tableau: `basis[k]` holds row `k`, columns are the structural
/// variables followed by the slacks, then the right-hand side.
struct Tableau {
    t: DMatrix<f64>,
    basis: Vec<usize>,
    n_struct: usize,
}

impl Tableau {
    fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut t = DMatrix::<f64>::zeros(rows, cols + rows + 1);
        for i in 0..rows {
            for j in 0..cols {
                t[(i, j)] = m[(i, j)];
            }
            t[(i, cols + i)] = 1.0;
            t[(i, cols + rows)] = 1.0;
        }
        Tableau {
            t,
            basis: (cols..cols + rows).collect(),
            n_struct: cols,
        }
    }

    fn rows(&self) -> usize {
        self.basis.len()
    }

    /// Lexicographic minimum ratio over `(rhs, B⁻¹ row)`; `None` if the
    /// column is unbounded.
    fn leaving_row(&self, col: usize) -> Option<usize> {
        let rhs = self.t.ncols() - 1;
        let key = |r: usize, k: usize| -> f64 {
            let v = if k == 0 { self.t[(r, rhs)] } else { self.t[(r, self.n_struct + k - 1)] };
            v / self.t[(r, col)]
        };
        let mut best: Option<usize> = None;
        for r in (0..self.rows()).filter(|&r| self.t[(r, col)] > PIVOT_TOL) {
            best = Some(match best {
                None => r,
                Some(b) => {
                    let mut pick = b;
                    for k in 0..=self.rows() {
                        let (kr, kb) = (key(r, k), key(b, k));
                        let scale = kr.abs().max(kb.abs()).max(1.0);
                        if (kr - kb).abs() > 1e-11 * scale {
                            if kr < kb {
                                pick = r;
                            }
                            break;
                        }
                    }
                    pick
                }
            });
        }
        best
    }

    /// Brings `col` into the basis; returns the variable that left.
    fn pivot(&mut self, col: usize) -> Option<usize> {
        let row = self.leaving_row(col)?;
        let p = self.t[(row, col)];
        for v in self.t.row_mut(row).iter_mut() {
            *v /= p;
        }
        for r in 0..self.rows() {
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
        Some(std::mem::replace(&mut self.basis[row], col))
    }

    fn structural_values(&self) -> DVector<f64> {
        let rhs = self.t.ncols() - 1;
        let mut x = DVector::zeros(self.n_struct);
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.t[(r, rhs)].max(0.0);
            }
        }
        x
    }
}

/// Follows the path that drops `missing` (`0 ≤ missing < m + n`). Returns the
/// row and column strategies, or `None` on numerical breakdown.
pub(crate) fn lemke_howson(a: &DMatrix<f64>, b: &DMatrix<f64>, missing: usize) -> Option<(DVector<f64>, DVector<f64>)> {
    let (m, n) = a.shape();
    let lift = |x: &DMatrix<f64>| {
        let lo = x.min();
        x.map(|v| v - lo + 1.0)
    };
    // P: variables x_0..x_m (labels 0..m), slacks t_0..t_n (labels m..m+n).
    let mut p = Tableau::new(&lift(b).transpose());
    // Q: variables y_0..y_n (labels m..m+n), slacks s_0..s_m (labels 0..m).
    let mut q = Tableau::new(&lift(a));
    let p_label = |v: usize| v; // x_i → i, t_j → m + j
    let q_label = |v: usize| if v < n { m + v } else { v - n };
    let p_var = |label: usize| label;
    let q_var = |label: usize| if label >= m { label - m } else { n + label };

    let mut in_p = missing < m;
    let mut entering = missing;
    for _ in 0..10 * (m + n) * (m + n) + 100 {
        let left = if in_p {
            p_label(p.pivot(p_var(entering))?)
        } else {
            q_label(q.pivot(q_var(entering))?)
        };
        if left == missing {
            let x = p.structural_values();
            let y = q.structural_values();
            let (sx, sy) = (x.sum(), y.sum());
            if sx <= 0.0 || sy <= 0.0 {
                return None;
            }
            return Some((x / sx, y / sy));
        }
        entering = left;
        in_p = !in_p;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gap(a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let ay = a * y;
        let bx = b.tr_mul(x);
        (ay.max() - x.dot(&ay)).max(bx.max() - y.dot(&bx))
    }

    #[test]
    fn matching_pennies() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let b = -&a;
        for k in 0..4 {
            let (x, y) = lemke_howson(&a, &b, k).unwrap();
            assert!((x[0] - 0.5).abs() < 1e-14 && (y[0] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn every_label_reaches_an_equilibrium() {
        // A classic 3x3 example with several equilibria.
        let a = DMatrix::from_row_slice(3, 3, &[3.0, 3.0, 0.0, 4.0, 0.0, 1.0, 0.0, 4.0, 5.0]);
        let b = DMatrix::from_row_slice(3, 3, &[3.0, 4.0, 0.0, 3.0, 0.0, 4.0, 0.0, 1.0, 5.0]);
        for k in 0..6 {
            let (x, y) = lemke_howson(&a, &b, k).unwrap();
            assert!(gap(&a, &b, &x, &y) < 1e-12, "label {k}");
        }
    }

    #[test]
    fn degenerate_ties_do_not_cycle() {
        // Constant rows and columns make every vertex degenerate.
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        for k in 0..6 {
            let (x, y) = lemke_howson(&a, &b, k).unwrap();
            assert!(gap(&a, &b, &x, &y) < 1e-12, "label {k}");
        }
    }
}
