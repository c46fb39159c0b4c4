//! Dense helpers: real Schur form, spectral abscissa, and a Bartels–Stewart
//! Lyapunov solver.

use nalgebra::{DMatrix, Schur};

use crate::error::{Error, Result};

/// Eigenvalues must sit strictly left of this line for a matrix to count as
/// Hurwitz.
pub const HURWITZ_MARGIN: f64 = -1e-9;

/// Result of a stability test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HurwitzCheck {
    pub hurwitz: bool,
    /// Largest real part over the spectrum; `NaN` if the eigenvalue iteration
    /// failed or the input was not finite.
    pub abscissa: f64,
}

pub(crate) fn real_schur(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    Schur::try_new(m.clone(), f64::EPSILON, 2000 * n.max(1))
        .map(|s| s.unpack())
        .ok_or_else(|| Error::Numerical(format!("real Schur iteration failed ({n}x{n})")))
}

/// Real parts of all eigenvalues, read off the quasi-triangular Schur factor.
fn eigen_real_parts(t: &DMatrix<f64>) -> Vec<f64> {
    let n = t.nrows();
    let mut out = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            let half_trace = 0.5 * (t[(k, k)] + t[(k + 1, k + 1)]);
            let half_diff = 0.5 * (t[(k, k)] - t[(k + 1, k + 1)]);
            let disc = half_diff * half_diff + t[(k + 1, k)] * t[(k, k + 1)];
            if disc >= 0.0 {
                out.push(half_trace + disc.sqrt());
                out.push(half_trace - disc.sqrt());
            } else {
                out.push(half_trace);
                out.push(half_trace);
            }
            k += 2;
        } else {
            out.push(t[(k, k)]);
            k += 1;
        }
    }
    out
}

/// Largest real part of the eigenvalues of a square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "spectral abscissa needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (_, t) = real_schur(m)?;
    Ok(eigen_real_parts(&t)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Hurwitz test with margin [`HURWITZ_MARGIN`].
pub fn is_hurwitz(m: &DMatrix<f64>) -> HurwitzCheck {
    match spectral_abscissa(m) {
        Ok(abscissa) => HurwitzCheck {
            hurwitz: abscissa < HURWITZ_MARGIN,
            abscissa,
        },
        Err(_) => HurwitzCheck {
            hurwitz: false,
            abscissa: f64::NAN,
        },
    }
}

/// Solves `Fᵀ X + X F + W = 0` for a Hurwitz `F`.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if !f.is_square() || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov operands {}x{} and {}x{}",
            f.nrows(),
            f.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let (u, t) = real_schur(f)?;
    let abscissa = eigen_real_parts(&t)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < HURWITZ_MARGIN) {
        return Err(Error::Unstable { abscissa });
    }
    let c = -(u.transpose() * w * &u);
    let y = solve_schur_lyapunov(&t, &c)?;
    let mut x = &u * y * u.transpose();
    symmetrize(&mut x);
    Ok(x)
}

/// Diagonal block boundaries of a quasi-triangular matrix.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut blocks = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)] != 0.0 {
            blocks.push((k, 2));
            k += 2;
        } else {
            blocks.push((k, 1));
            k += 1;
        }
    }
    blocks
}

/// Solves `Tᵀ Y + Y T = C` with `T` upper quasi-triangular, block by block.
fn solve_schur_lyapunov(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = t.nrows();
    let blocks = schur_blocks(t);
    let mut y = DMatrix::<f64>::zeros(n, n);
    for (bi, &(i0, p)) in blocks.iter().enumerate() {
        for &(j0, q) in &blocks {
            let mut rhs = c.view((i0, j0), (p, q)).clone_owned();
            for &(k0, s) in &blocks[..bi] {
                // (Tᵀ)_{ik} Y_{kj} with k < i
                rhs -= t.view((k0, i0), (s, p)).transpose() * y.view((k0, j0), (s, q));
            }
            if j0 > 0 {
                rhs -= y.view((i0, 0), (p, j0)) * t.view((0, j0), (j0, q));
            }
            let tii = t.view((i0, i0), (p, p));
            let tjj = t.view((j0, j0), (q, q));
            // vec(Tiiᵀ Y + Y Tjj) = (I_q ⊗ Tiiᵀ + Tjjᵀ ⊗ I_p) vec(Y)
            let dim = p * q;
            let mut sys = DMatrix::<f64>::zeros(dim, dim);
            for col in 0..q {
                for row in 0..p {
                    let eq = col * p + row;
                    for k in 0..p {
                        sys[(eq, col * p + k)] += tii[(k, row)];
                    }
                    for l in 0..q {
                        sys[(eq, l * p + row)] += tjj[(l, col)];
                    }
                }
            }
            let b = nalgebra::DVector::from_iterator(dim, rhs.iter().copied());
            let sol = sys
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Numerical("singular Sylvester block".into()))?;
            for col in 0..q {
                for row in 0..p {
                    y[(i0 + row, j0 + col)] = sol[col * p + row];
                }
            }
        }
    }
    Ok(y)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}
