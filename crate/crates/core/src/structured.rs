//! Minimizing the LQR cost over gains restricted to a sparsity mask.
//!
//! The cost is smooth on the set of stabilizing gains, with gradient
//! `∇J(K) = 2 (R K − Bᵀ P_K) L_K` where `P_K` is the closed-loop value matrix
//! and `L_K` the controllability Gramian of the disturbance,
//! `(A−BK) L + L (A−BK)ᵀ + D Dᵀ = 0`. Because the mask is a coordinate
//! subspace, projecting onto it is just zeroing entries, and projected
//! gradient descent with an Armijo line search stays feasible throughout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, max_abs};
use crate::lqr::{cost_matrix, solve_riccati, GainMatrix, LinearSystem};
use crate::pattern::GainMask;

/// Tuning knobs for [`optimize_structured`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    /// Stop when the masked gradient's ∞-norm is below `grad_tol · (1 + J)`.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            grad_tol: 1e-6,
            max_iters: 5000,
            armijo_c: 1e-4,
            backtrack_factor: 0.5,
            min_step: 1e-14,
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("armijo_c", self.armijo_c),
            ("backtrack_factor", self.backtrack_factor),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, format!("must be positive, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters", "must be positive"));
        }
        if self.backtrack_factor >= 1.0 {
            return Err(Error::validation(
                "backtrack_factor",
                format!("must lie in (0, 1), got {}", self.backtrack_factor),
            ));
        }
        Ok(())
    }
}

/// A structured LQR instance.
#[derive(Clone, Debug)]
pub struct StructuredProblem<'a> {
    pub system: &'a LinearSystem,
    pub mask: GainMask,
    pub options: OptimizerOptions,
}

impl<'a> StructuredProblem<'a> {
    pub fn new(system: &'a LinearSystem, mask: GainMask, options: OptimizerOptions) -> Result<Self> {
        if mask.shape() != (system.input_dim(), system.state_dim()) {
            let (r, c) = mask.shape();
            return Err(Error::Dimension(format!(
                "mask is {r}x{c}, system gain is {}x{}",
                system.input_dim(),
                system.state_dim()
            )));
        }
        options.validate()?;
        Ok(StructuredProblem {
            system,
            mask,
            options,
        })
    }
}

/// Where a descent run started.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    /// Masked truncation of the unconstrained LQR gain.
    LqrTruncation,
    /// Masked truncation of the LQR gain for `Q · 10^exponent`.
    WeightedLqrTruncation { exponent: u32 },
    /// The zero gain (open loop).
    Zero,
    /// The i-th caller-supplied warm start.
    WarmStart { index: usize },
}

#[derive(Clone, Debug)]
pub struct StructuredSolution {
    pub k_star: GainMatrix,
    pub j_star: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub initializer: Initializer,
}

/// Cost and its gradient with respect to every entry of `K`.
pub fn cost_and_gradient(sys: &LinearSystem, k: &GainMatrix) -> Result<(f64, DMatrix<f64>)> {
    let (j, p) = cost_matrix(sys, k)?;
    let g = gradient_with_value(sys, k, &p)?;
    Ok((j, g))
}

fn gradient_with_value(sys: &LinearSystem, k: &GainMatrix, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let km = k.as_matrix();
    let acl = sys.closed_loop(k);
    let dd = sys.d() * sys.d().transpose();
    let l = linalg::solve_lyapunov(&acl.transpose(), &dd)?;
    Ok((sys.r() * km - sys.b().transpose() * p) * l * 2.0)
}

fn stabilizes(sys: &LinearSystem, k: &DMatrix<f64>) -> bool {
    linalg::is_hurwitz(&(sys.a() - sys.b() * k)).hurwitz
}

/// Every distinct stabilizing starting point of the initialization ladder, in
/// ladder order.
pub fn initialization_ladder(sys: &LinearSystem, mask: &GainMask) -> Vec<(Initializer, GainMatrix)> {
    let mut out: Vec<(Initializer, GainMatrix)> = Vec::new();
    let push = |init: Initializer, k: DMatrix<f64>, out: &mut Vec<(Initializer, GainMatrix)>| {
        if stabilizes(sys, &k) && !out.iter().any(|(_, g)| g.as_matrix() == &k) {
            out.push((init, GainMatrix::from_matrix_unchecked(k)));
        }
    };
    if let Ok(sol) = solve_riccati(sys) {
        push(
            Initializer::LqrTruncation,
            mask.project(sol.k.as_matrix()),
            &mut out,
        );
    }
    for exponent in 1..=4u32 {
        let weighted = sys.with_scaled_q(10f64.powi(exponent as i32));
        if let Ok(sol) = solve_riccati(&weighted) {
            push(
                Initializer::WeightedLqrTruncation { exponent },
                mask.project(sol.k.as_matrix()),
                &mut out,
            );
        }
    }
    if linalg::is_hurwitz(sys.a()).hurwitz {
        push(
            Initializer::Zero,
            DMatrix::zeros(sys.input_dim(), sys.state_dim()),
            &mut out,
        );
    }
    out
}

/// First stabilizing gain of the initialization ladder, if any.
pub fn find_stabilizing_structured_gain(sys: &LinearSystem, mask: &GainMask) -> Option<GainMatrix> {
    initialization_ladder(sys, mask)
        .into_iter()
        .next()
        .map(|(_, k)| k)
}

/// Best local solution over the initialization ladder.
pub fn optimize_structured(problem: &StructuredProblem<'_>) -> Result<StructuredSolution> {
    optimize_structured_with_starts(problem, &[])
}

/// Like [`optimize_structured`], additionally descending from each of
/// `warm_starts` (projected onto the mask; destabilizing ones are skipped).
pub fn optimize_structured_with_starts(
    problem: &StructuredProblem<'_>,
    warm_starts: &[GainMatrix],
) -> Result<StructuredSolution> {
    let sys = problem.system;
    let mask = &problem.mask;
    let mut starts = initialization_ladder(sys, mask);
    if mask.is_full() {
        // The LQR gain is the unique stationary point.
        starts.truncate(1);
    } else {
        for (index, k) in warm_starts.iter().enumerate() {
            let projected = mask.project(k.as_matrix());
            if stabilizes(sys, &projected) && !starts.iter().any(|(_, g)| g.as_matrix() == &projected) {
                starts.push((
                    Initializer::WarmStart { index },
                    GainMatrix::from_matrix_unchecked(projected),
                ));
            }
        }
    }
    if starts.is_empty() {
        return Err(Error::PatternNotStabilizable {
            pattern: format!("<mask with {} free entries>", mask.free_count()),
        });
    }
    let mut best: Option<StructuredSolution> = None;
    for (init, k0) in starts {
        let sol = descend_from(problem, k0, init)?;
        if best.as_ref().is_none_or(|b| sol.j_star < b.j_star) {
            best = Some(sol);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Projected gradient descent from a stabilizing, mask-conforming gain.
///
/// Trial steps use the Barzilai–Borwein length and are shrunk until the
/// Armijo condition holds; destabilizing trials count as failures. The
/// accepted costs are therefore non-increasing.
pub fn descend_from(
    problem: &StructuredProblem<'_>,
    k0: GainMatrix,
    initializer: Initializer,
) -> Result<StructuredSolution> {
    let sys = problem.system;
    let mask = &problem.mask;
    let opts = &problem.options;

    let mut k = mask.project(k0.as_matrix());
    let (mut j, p) = cost_matrix(sys, &GainMatrix::from_matrix_unchecked(k.clone()))?;
    let mut g = mask.project(&gradient_with_value(
        sys,
        &GainMatrix::from_matrix_unchecked(k.clone()),
        &p,
    )?);
    let mut prev: Option<(DMatrix<f64>, DMatrix<f64>)> = None;
    let mut alpha = 1.0 / (1.0 + g.norm());
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let gnorm = max_abs(&g);
        if gnorm <= opts.grad_tol * (1.0 + j.abs()) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        if let Some((kp, gp)) = &prev {
            let s = &k - kp;
            let y = &g - gp;
            let sy = s.dot(&y);
            alpha = if sy > 0.0 { s.dot(&s) / sy } else { alpha * 2.0 };
        }
        let gsq = g.norm_squared();
        let mut accepted = None;
        while alpha >= opts.min_step {
            let trial = &k - &g * alpha;
            let trial_gain = GainMatrix::from_matrix_unchecked(trial.clone());
            if let Ok((jt, pt)) = cost_matrix(sys, &trial_gain) {
                if jt <= j - opts.armijo_c * alpha * gsq {
                    accepted = Some((trial, jt, pt));
                    break;
                }
            }
            alpha *= opts.backtrack_factor;
        }
        let Some((trial, jt, pt)) = accepted else {
            // Line search exhausted: no further decrease is resolvable.
            break;
        };
        let gt = mask.project(&gradient_with_value(
            sys,
            &GainMatrix::from_matrix_unchecked(trial.clone()),
            &pt,
        )?);
        prev = Some((std::mem::replace(&mut k, trial), std::mem::replace(&mut g, gt)));
        j = jt;
        iterations += 1;
    }

    Ok(StructuredSolution {
        final_grad_norm: max_abs(&g),
        k_star: GainMatrix::from_matrix_unchecked(k),
        j_star: j,
        iterations,
        converged,
        initializer,
    })
}
