//! Continuous-time LQR: system description, Riccati solver, and the quadratic
//! cost of a fixed gain under an impulse disturbance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, is_hurwitz, max_abs, min_symmetric_eigenvalue, symmetrize};
use crate::pattern::BlockLayout;

pub use crate::linalg::{solve_lyapunov, HurwitzCheck};

const SYMMETRY_TOL: f64 = 1e-8;
const R_MIN_EIG: f64 = 1e-10;

/// `ẋ = Ax + Bu + Dw` with weights `Q`, `R` and a per-node block layout.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    d: DVector<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    layout: BlockLayout,
}

impl LinearSystem {
    /// Validates dimensions and weights, symmetrizes `Q` and `R`, and checks
    /// stabilizability by solving the Riccati equation.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DVector<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        layout: BlockLayout,
    ) -> Result<Self> {
        let sys = Self::checked_unvalidated(a, b, d, q, r, layout)?;
        solve_riccati(&sys)?;
        Ok(sys)
    }

    /// Everything [`LinearSystem::new`] checks except stabilizability.
    pub(crate) fn checked_unvalidated(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DVector<f64>,
        mut q: DMatrix<f64>,
        mut r: DMatrix<f64>,
        layout: BlockLayout,
    ) -> Result<Self> {
        let m = layout.state_dim();
        let nu = layout.input_dim();
        let expect = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            }
        };
        if nu == 0 {
            return Err(Error::Dimension("system has no inputs".into()));
        }
        expect("A", a.shape(), (m, m))?;
        expect("B", b.shape(), (m, nu))?;
        expect("D", (d.len(), 1), (m, 1))?;
        expect("Q", q.shape(), (m, m))?;
        expect("R", r.shape(), (nu, nu))?;
        for (name, mat) in [("A", &a), ("B", &b), ("Q", &q), ("R", &r)] {
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(Error::validation(name, "contains non-finite entries"));
            }
        }
        if !d.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("D", "contains non-finite entries"));
        }

        let q_asym = max_abs(&(&q - q.transpose()));
        if q_asym > SYMMETRY_TOL * (1.0 + max_abs(&q)) {
            return Err(Error::validation(
                "Q",
                format!("not symmetric (max asymmetry {q_asym:e})"),
            ));
        }
        symmetrize(&mut q);
        let q_min = min_symmetric_eigenvalue(&q);
        if q_min < -SYMMETRY_TOL * (1.0 + max_abs(&q)) {
            return Err(Error::validation(
                "Q",
                format!("not positive semidefinite (min eigenvalue {q_min:e})"),
            ));
        }

        let r_asym = max_abs(&(&r - r.transpose()));
        if r_asym > SYMMETRY_TOL * (1.0 + max_abs(&r)) {
            return Err(Error::validation(
                "R",
                format!("not symmetric (max asymmetry {r_asym:e})"),
            ));
        }
        symmetrize(&mut r);
        let r_min = min_symmetric_eigenvalue(&r);
        if r_min <= R_MIN_EIG {
            return Err(Error::validation(
                "R",
                format!("not positive definite (min eigenvalue {r_min:e})"),
            ));
        }
        Ok(LinearSystem {
            a,
            b,
            d,
            q,
            r,
            layout,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn node_count(&self) -> usize {
        self.layout.node_count()
    }

    /// Same system with the state weight multiplied by `factor`.
    pub(crate) fn with_scaled_q(&self, factor: f64) -> LinearSystem {
        LinearSystem {
            q: &self.q * factor,
            ..self.clone()
        }
    }

    /// `A − BK`.
    pub fn closed_loop(&self, k: &GainMatrix) -> DMatrix<f64> {
        &self.a - &self.b * k.as_matrix()
    }

    pub fn to_document(&self) -> SystemDocument {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        SystemDocument {
            n: self.layout.node_count(),
            state_sizes: self.layout.state_sizes().to_vec(),
            input_sizes: self.layout.input_sizes().to_vec(),
            a: rows(&self.a),
            b: rows(&self.b),
            d: MatrixOrVector::Matrix(self.d.iter().map(|&v| vec![v]).collect()),
            q: rows(&self.q),
            r: rows(&self.r),
        }
    }

    pub fn from_document(doc: SystemDocument) -> Result<Self> {
        if doc.state_sizes.len() != doc.n || doc.input_sizes.len() != doc.n {
            return Err(Error::Dimension(format!(
                "n = {} but {} state sizes and {} input sizes given",
                doc.n,
                doc.state_sizes.len(),
                doc.input_sizes.len()
            )));
        }
        let layout = BlockLayout::new(doc.state_sizes, doc.input_sizes)?;
        let m = layout.state_dim();
        let nu = layout.input_dim();
        let a = matrix_from_rows("A", &doc.a, m, m)?;
        let b = matrix_from_rows("B", &doc.b, m, nu)?;
        let d = match doc.d {
            MatrixOrVector::Matrix(rows) => matrix_from_rows("D", &rows, m, 1)?.column(0).into(),
            MatrixOrVector::Vector(v) => {
                if v.len() != m {
                    return Err(Error::Dimension(format!(
                        "D has {} entries, layout needs {m}",
                        v.len()
                    )));
                }
                DVector::from_vec(v)
            }
        };
        let q = matrix_from_rows("Q", &doc.q, m, m)?;
        let r = matrix_from_rows("R", &doc.r, nu, nu)?;
        LinearSystem::new(a, b, d, q, r, layout)
    }
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>], nr: usize, nc: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nr || rows.iter().any(|r| r.len() != nc) {
        let got_cols = rows.first().map_or(0, Vec::len);
        return Err(Error::Dimension(format!(
            "{name} is {}x{got_cols} (or ragged), layout needs {nr}x{nc}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

/// On-disk form of a [`LinearSystem`]: row-major nested arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystemDocument {
    pub n: usize,
    pub state_sizes: Vec<usize>,
    pub input_sizes: Vec<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: MatrixOrVector,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

/// `D` is written as an m×1 nested array; a flat array is accepted on read.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixOrVector {
    Matrix(Vec<Vec<f64>>),
    Vector(Vec<f64>),
}

/// An r×m state-feedback gain, `u = −Kx`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainMatrix(DMatrix<f64>);

impl GainMatrix {
    pub fn new(k: DMatrix<f64>, sys: &LinearSystem) -> Result<Self> {
        if k.shape() != (sys.input_dim(), sys.state_dim()) {
            return Err(Error::Dimension(format!(
                "gain is {}x{}, system needs {}x{}",
                k.nrows(),
                k.ncols(),
                sys.input_dim(),
                sys.state_dim()
            )));
        }
        Ok(GainMatrix(k))
    }

    pub fn zeros(sys: &LinearSystem) -> Self {
        GainMatrix(DMatrix::zeros(sys.input_dim(), sys.state_dim()))
    }

    pub(crate) fn from_matrix_unchecked(k: DMatrix<f64>) -> Self {
        GainMatrix(k)
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Stabilizing Riccati solution and the optimal gain.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    pub k: GainMatrix,
    /// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + Q`.
    pub residual: f64,
}

/// Residual of the continuous algebraic Riccati equation.
pub fn care_residual(sys: &LinearSystem, p: &DMatrix<f64>) -> f64 {
    let r_inv = sys
        .r
        .clone()
        .cholesky()
        .expect("R validated positive definite")
        .inverse();
    let g = &sys.b * r_inv * sys.b.transpose();
    (sys.a.transpose() * p + p * &sys.a - p * g * p + &sys.q).norm()
}

/// Solves `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` for the stabilizing `P`.
///
/// The Hamiltonian matrix sign function gives the initial solution; a few
/// Newton–Kleinman steps then polish it to full accuracy.
pub fn solve_riccati(sys: &LinearSystem) -> Result<RiccatiSolution> {
    let chol = sys
        .r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::validation("R", "not positive definite"))?;
    let r_inv = chol.inverse();
    let g = &sys.b * &r_inv * sys.b.transpose();

    let mut p = hamiltonian_sign_solve(&sys.a, &g, &sys.q)?;
    let gain_of = |p: &DMatrix<f64>| &r_inv * sys.b.transpose() * p;

    let k0 = gain_of(&p);
    let check = is_hurwitz(&(&sys.a - &sys.b * &k0));
    if !check.hurwitz {
        return Err(Error::NotStabilizable(format!(
            "closed loop of the Riccati gain has spectral abscissa {:e}",
            check.abscissa
        )));
    }

    // Newton–Kleinman refinement.
    let mut last_step = f64::INFINITY;
    for _ in 0..30 {
        let k = gain_of(&p);
        let acl = &sys.a - &sys.b * &k;
        let w = &sys.q + k.transpose() * &sys.r * &k;
        let next = match linalg::solve_lyapunov(&acl, &w) {
            Ok(next) => next,
            Err(_) => break,
        };
        let step = (&next - &p).norm();
        p = next;
        if step <= 1e-14 * (1.0 + p.norm()) || step >= last_step {
            break;
        }
        last_step = step;
    }
    symmetrize(&mut p);

    let k = gain_of(&p);
    let check = is_hurwitz(&(&sys.a - &sys.b * &k));
    if !check.hurwitz {
        return Err(Error::NotStabilizable(format!(
            "refined Riccati gain does not stabilize (abscissa {:e})",
            check.abscissa
        )));
    }
    let residual = (sys.a.transpose() * &p + &p * &sys.a - &p * &g * &p + &sys.q).norm();
    if residual > 1e-7 * (1.0 + p.norm()) {
        return Err(Error::Numerical(format!(
            "Riccati residual {residual:e} too large for ||P|| = {:e}",
            p.norm()
        )));
    }
    Ok(RiccatiSolution {
        p,
        k: GainMatrix(k),
        residual,
    })
}

/// Stable invariant subspace of `H = [[A, −G], [−Q, −Aᵀ]]` via the
/// determinant-scaled Newton iteration for `sign(H)`.
fn hamiltonian_sign_solve(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let mut z = DMatrix::<f64>::zeros(2 * m, 2 * m);
    z.view_mut((0, 0), (m, m)).copy_from(a);
    z.view_mut((0, m), (m, m)).copy_from(&(-g));
    z.view_mut((m, 0), (m, m)).copy_from(&(-q));
    z.view_mut((m, m), (m, m)).copy_from(&(-a.transpose()));

    let not_stabilizable =
        || Error::NotStabilizable("Hamiltonian has eigenvalues on the imaginary axis".into());

    let mut converged = false;
    for _ in 0..100 {
        let lu = z.clone().lu();
        let u = lu.u();
        let log_det: f64 = u.diagonal().iter().map(|v| v.abs().ln()).sum();
        if !log_det.is_finite() {
            return Err(not_stabilizable());
        }
        let inv = lu.try_inverse().ok_or_else(not_stabilizable)?;
        if !inv.iter().all(|v| v.is_finite()) {
            return Err(not_stabilizable());
        }
        let c = (log_det / (2 * m) as f64).exp();
        let next = (&z / c + inv * c) * 0.5;
        let change = (&next - &z).abs().column_sum().max();
        let size = next.abs().column_sum().max();
        z = next;
        if change <= 1e-12 * size {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(not_stabilizable());
    }

    // (sign(H) + I) [I; P] = 0  ⇒  [W12; W22 + I] P = −[W11 + I; W21]
    let eye = DMatrix::<f64>::identity(m, m);
    let mut lhs = DMatrix::<f64>::zeros(2 * m, m);
    lhs.view_mut((0, 0), (m, m))
        .copy_from(&z.view((0, m), (m, m)));
    lhs.view_mut((m, 0), (m, m))
        .copy_from(&(z.view((m, m), (m, m)) + &eye));
    let mut rhs = DMatrix::<f64>::zeros(2 * m, m);
    rhs.view_mut((0, 0), (m, m))
        .copy_from(&(-(z.view((0, 0), (m, m)) + &eye)));
    rhs.view_mut((m, 0), (m, m))
        .copy_from(&(-z.view((m, 0), (m, m))));
    let svd = lhs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-12 * smax.max(1.0)) {
        return Err(not_stabilizable());
    }
    let mut p = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::Numerical(format!("Riccati subspace solve: {e}")))?;
    symmetrize(&mut p);
    Ok(p)
}

/// `J(K) = Dᵀ P_K D` with `(A−BK)ᵀP_K + P_K(A−BK) + Q + KᵀRK = 0`.
pub fn evaluate_cost(sys: &LinearSystem, k: &GainMatrix) -> Result<f64> {
    let (j, _) = cost_matrix(sys, k)?;
    Ok(j)
}

/// Cost together with the closed-loop value matrix `P_K`.
pub(crate) fn cost_matrix(sys: &LinearSystem, k: &GainMatrix) -> Result<(f64, DMatrix<f64>)> {
    let km = k.as_matrix();
    if km.shape() != (sys.input_dim(), sys.state_dim()) {
        return Err(Error::Dimension(format!(
            "gain is {}x{}, system needs {}x{}",
            km.nrows(),
            km.ncols(),
            sys.input_dim(),
            sys.state_dim()
        )));
    }
    let acl = sys.closed_loop(k);
    let check = is_hurwitz(&acl);
    if !check.hurwitz {
        return Err(Error::Unstable {
            abscissa: check.abscissa,
        });
    }
    let w = &sys.q + km.transpose() * &sys.r * km;
    let p = linalg::solve_lyapunov(&acl, &w)?;
    let j = (sys.d.transpose() * &p * &sys.d)[(0, 0)];
    Ok((j, p))
}
