//! Mixed-strategy Nash equilibria by multi-start local optimization.
//!
//! Each restart runs an augmented-Lagrangian projected-gradient method on
//!
//! ```text
//! max  rᵀ(U_a + U_d)d − f − g
//! s.t. U_a d ≤ f·1,  U_dᵀ r ≤ g·1,  r, d on the simplex,
//! ```
//!
//! whose global maximizers (objective 0) are exactly the equilibria. The
//! approximate point is then polished: its supports are guessed at several
//! thresholds and, for each guess, two small linear programs recover exact
//! strategies that make every supported action a best response. Lemke–Howson
//! paths from every dropped label supply further exact candidates, which
//! covers equilibria with tiny probabilities that no restart lands near.
//! Every candidate is verified directly by its best-response gap.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::lemke::lemke_howson;
use super::lp::{Lp, LpOutcome};
use super::payoff::{bilinear, expected_payoffs_from_game, MixedStrategy, PayoffMatrices};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub restarts: usize,
    /// Acceptance threshold on the best-response gap, relative to the payoff
    /// scale `max(1, max|U_a|, max|U_d|)`.
    pub eps_tol: f64,
    pub seed: u64,
    pub max_outer: usize,
    pub max_inner: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            restarts: 20,
            eps_tol: 1e-6,
            seed: 0,
            max_outer: 40,
            max_inner: 300,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::validation("restarts", "must be at least 1"));
        }
        if !(self.eps_tol > 0.0 && self.eps_tol.is_finite()) {
            return Err(Error::validation("eps_tol", format!("must be positive, got {}", self.eps_tol)));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::validation("max_outer", "iteration limits must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub r_star: MixedStrategy,
    pub d_star: MixedStrategy,
    pub f_star: f64,
    pub g_star: f64,
    pub expected_loss: f64,
    pub expected_cost_attacker: f64,
    pub expected_cost_defender: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub restarts_used: usize,
}

/// Largest gain any pure strategy offers either player against `(r, d)`.
pub fn best_response_gap(u: &PayoffMatrices, r: &DVector<f64>, d: &DVector<f64>) -> f64 {
    let ad = &u.u_a * d;
    let bd = u.u_d.tr_mul(r);
    let f = r.dot(&ad);
    let g = d.dot(&bd);
    (ad.max() - f).max(bd.max() - g).max(0.0)
}

pub(crate) fn assemble(
    u: &PayoffMatrices,
    r: DVector<f64>,
    d: DVector<f64>,
    tolerance: f64,
    restarts_used: usize,
) -> Result<EquilibriumSolution> {
    let r = MixedStrategy::from_vector_unchecked(r);
    let d = MixedStrategy::from_vector_unchecked(d);
    let e = expected_payoffs_from_game(&r, &d, u)?;
    Ok(EquilibriumSolution {
        epsilon: best_response_gap(u, r.probs(), d.probs()),
        f_star: e.e_a,
        g_star: e.e_d,
        expected_loss: e.e_loss,
        expected_cost_attacker: e.e_cost_a,
        expected_cost_defender: e.e_cost_d,
        r_star: r,
        d_star: d,
        tolerance,
        restarts_used,
    })
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

fn normalize(v: &DVector<f64>) -> DVector<f64> {
    let c = v.map(|x| x.max(0.0));
    let s = c.sum();
    if s > 0.0 {
        c / s
    } else {
        DVector::from_element(v.len(), 1.0 / v.len() as f64)
    }
}

/// Payoffs divided by the payoff scale, so every entry lies in [−1, 1].
struct Scaled {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

struct AlState<'s> {
    g: &'s Scaled,
    sum: DMatrix<f64>,
    lam: DVector<f64>,
    mu: DVector<f64>,
    rho: f64,
}

impl AlState<'_> {
    fn value_grad(
        &self,
        r: &DVector<f64>,
        d: &DVector<f64>,
        f: f64,
        g: f64,
    ) -> (f64, DVector<f64>, DVector<f64>, f64, f64) {
        let sd = &self.sum * d;
        let ad = &self.g.a * d;
        let br = self.g.b.tr_mul(r);
        let alpha = (&self.lam + (ad.add_scalar(-f)) * self.rho).map(|x| x.max(0.0));
        let beta = (&self.mu + (br.add_scalar(-g)) * self.rho).map(|x| x.max(0.0));
        let value = -r.dot(&sd) + f + g
            + (alpha.norm_squared() - self.lam.norm_squared()) / (2.0 * self.rho)
            + (beta.norm_squared() - self.mu.norm_squared()) / (2.0 * self.rho);
        let gr = -sd + &self.g.b * &beta;
        let gd = -self.sum.tr_mul(r) + self.g.a.tr_mul(&alpha);
        (value, gr, gd, 1.0 - alpha.sum(), 1.0 - beta.sum())
    }
}

fn local_solve(g: &Scaled, r0: &DVector<f64>, d0: &DVector<f64>, opts: &SolverOptions) -> (DVector<f64>, DVector<f64>) {
    let mut st = AlState {
        g,
        sum: &g.a + &g.b,
        lam: DVector::zeros(g.a.nrows()),
        mu: DVector::zeros(g.a.ncols()),
        rho: 10.0,
    };
    let (mut r, mut d) = (r0.clone(), d0.clone());
    let mut f = (&g.a * &d).max();
    let mut gg = g.b.tr_mul(&r).max();
    let mut prev_violation = f64::INFINITY;
    let mut step = 0.1;

    for _ in 0..opts.max_outer {
        for _ in 0..opts.max_inner {
            let (value, gr, gd, gf, ggr) = st.value_grad(&r, &d, f, gg);
            let mut t = step;
            let moved;
            loop {
                let rn = project_simplex(&(&r - &gr * t));
                let dn = project_simplex(&(&d - &gd * t));
                let (fnew, gnew) = (f - t * gf, gg - t * ggr);
                let dr = &rn - &r;
                let dd = &dn - &d;
                let (df, dg) = (fnew - f, gnew - gg);
                let dist = dr.norm_squared() + dd.norm_squared() + df * df + dg * dg;
                let linear = gr.dot(&dr) + gd.dot(&dd) + gf * df + ggr * dg;
                let (vn, ..) = st.value_grad(&rn, &dn, fnew, gnew);
                if vn <= value + linear + dist / (2.0 * t) || t < 1e-14 {
                    r = rn;
                    d = dn;
                    f = fnew;
                    gg = gnew;
                    moved = dist;
                    break;
                }
                t *= 0.5;
            }
            step = (t * 2.0).min(1e3);
            if moved < 1e-24 {
                break;
            }
        }
        let c = (&g.a * &d).add_scalar(-f);
        let e = g.b.tr_mul(&r).add_scalar(-gg);
        let violation = c.max().max(e.max()).max(0.0);
        st.lam = (&st.lam + &c * st.rho).map(|x| x.max(0.0));
        st.mu = (&st.mu + &e * st.rho).map(|x| x.max(0.0));
        let gap = r.dot(&(&st.sum * &d)) - f - gg;
        if violation < 1e-12 && gap.abs() < 1e-12 {
            break;
        }
        if violation > 0.25 * prev_violation {
            st.rho = (st.rho * 5.0).min(1e7);
        }
        prev_violation = violation;
    }
    (r, d)
}

/// Exact strategies for guessed supports. `sa`: attacker actions that must be
/// best responses (and may be played); `sd` likewise for the defender.
fn strategies_for_supports(g: &Scaled, sa: &[bool], sd: &[bool]) -> Option<(DVector<f64>, DVector<f64>)> {
    // Entries lie in [−1, 1], so f, g ∈ [−1, 1]; shift by 2 to keep them
    // non-negative in the program.
    let d = side_program(&g.a, sa, sd, 1.0)?;
    let r = side_program(&g.b.transpose(), sd, sa, -1.0)?;
    Some((r, d))
}

/// Over `x` supported on `own`, with `(M x)_i` equal to its maximum `v` for
/// `i ∈ tied` and at most `v` elsewhere, minimize `direction · v`.
fn side_program(m: &DMatrix<f64>, tied: &[bool], own: &[bool], direction: f64) -> Option<DVector<f64>> {
    let cols: Vec<usize> = (0..m.ncols()).filter(|&j| own[j]).collect();
    let nx = cols.len() + 1;
    let v_col = cols.len();
    let tied_rows: Vec<usize> = (0..m.nrows()).filter(|&i| tied[i]).collect();
    let free_rows: Vec<usize> = (0..m.nrows()).filter(|&i| !tied[i]).collect();
    let fill = |rows: &[usize], extra: usize| {
        let mut out = DMatrix::<f64>::zeros(rows.len() + extra, nx);
        for (k, &i) in rows.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                out[(k, c)] = m[(i, j)];
            }
            out[(k, v_col)] = -1.0;
        }
        out
    };
    let mut a_eq = fill(&tied_rows, 1);
    let last = tied_rows.len();
    for c in 0..cols.len() {
        a_eq[(last, c)] = 1.0;
    }
    let mut b_eq = DVector::from_element(tied_rows.len() + 1, -2.0);
    b_eq[last] = 1.0;
    let a_le = fill(&free_rows, 0);
    let b_le = DVector::from_element(free_rows.len(), -2.0);
    let mut c = DVector::zeros(nx);
    c[v_col] = direction;
    match (Lp { c, a_eq, b_eq, a_le, b_le }).solve() {
        LpOutcome::Optimal { x, .. } => {
            let mut full = DVector::zeros(m.ncols());
            for (k, &j) in cols.iter().enumerate() {
                full[j] = x[k];
            }
            Some(normalize(&full))
        }
        _ => None,
    }
}

fn support_guesses(g: &Scaled, r: &DVector<f64>, d: &DVector<f64>) -> Vec<(Vec<bool>, Vec<bool>)> {
    let mut out: Vec<(Vec<bool>, Vec<bool>)> = Vec::new();
    let mut push = |sa: Vec<bool>, sd: Vec<bool>| {
        if sa.iter().any(|&x| x) && sd.iter().any(|&x| x) && !out.iter().any(|(a, b)| *a == sa && *b == sd) {
            out.push((sa, sd));
        }
    };
    for t in [1e-2, 1e-3, 1e-4, 1e-6, 1e-9] {
        push(r.iter().map(|&x| x > t).collect(), d.iter().map(|&x| x > t).collect());
    }
    let ad = &g.a * d;
    let br = g.b.tr_mul(r);
    let (amax, bmax) = (ad.max(), br.max());
    for tau in [1e-9, 1e-6, 1e-3] {
        push(
            ad.iter().map(|&x| x >= amax - tau).collect(),
            br.iter().map(|&x| x >= bmax - tau).collect(),
        );
    }
    out
}

#[derive(Clone, Debug)]
struct Candidate {
    r: DVector<f64>,
    d: DVector<f64>,
    f: f64,
    g: f64,
    epsilon: f64,
    support: usize,
    restart: usize,
}

fn candidate(u: &PayoffMatrices, r: DVector<f64>, d: DVector<f64>, restart: usize) -> Candidate {
    let support = r.iter().chain(d.iter()).filter(|&&x| x > 1e-9).count();
    Candidate {
        f: bilinear(&r, &u.u_a, &d),
        g: bilinear(&r, &u.u_d, &d),
        epsilon: best_response_gap(u, &r, &d),
        support,
        restart,
        r,
        d,
    }
}

fn polish(u: &PayoffMatrices, g: &Scaled, r: &DVector<f64>, d: &DVector<f64>, restart: usize) -> Vec<Candidate> {
    let mut out = vec![candidate(u, normalize(r), normalize(d), restart)];
    for (sa, sd) in support_guesses(g, r, d) {
        if let Some((rp, dp)) = strategies_for_supports(g, &sa, &sd) {
            out.push(candidate(u, rp, dp, restart));
        }
    }
    out
}

fn argmax_by(values: impl Iterator<Item = f64>, tie: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (k, v) in values.enumerate() {
        if v > best_v || (v == best_v && tie[k] > tie[best]) {
            best = k;
            best_v = v;
        }
    }
    best
}

fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn starting_points(u: &PayoffMatrices, opts: &SolverOptions) -> Vec<(DVector<f64>, DVector<f64>)> {
    let (rows, cols) = (u.rows(), u.cols());
    let pure = |len: usize, k: usize| {
        let mut v = DVector::zeros(len);
        v[k] = 1.0;
        v
    };
    let row_mean: Vec<f64> = u.u_a.row_iter().map(|row| row.mean()).collect();
    let col_mean: Vec<f64> = u.u_d.column_iter().map(|col| col.mean()).collect();

    let mut starts = Vec::new();
    let j0 = argmax_by(col_mean.iter().copied(), &col_mean);
    let i0 = argmax_by(u.u_a.column(j0).iter().copied(), &row_mean);
    starts.push((pure(rows, i0), pure(cols, j0)));
    let i1 = argmax_by(row_mean.iter().copied(), &row_mean);
    let j1 = argmax_by(u.u_d.row(i1).iter().copied(), &col_mean);
    starts.push((pure(rows, i1), pure(cols, j1)));
    starts.push((
        DVector::from_element(rows, 1.0 / rows as f64),
        DVector::from_element(cols, 1.0 / cols as f64),
    ));
    for &i in &top_k(&row_mean, 3) {
        for &j in &top_k(&col_mean, 3) {
            starts.push((pure(rows, i), pure(cols, j)));
        }
    }
    starts.truncate(opts.restarts);
    let mut k = starts.len() as u64;
    while starts.len() < opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(k);
        let mut draw = |len: usize| {
            let v = DVector::from_fn(len, |_, _| {
                let x: f64 = Exp1.sample(&mut rng);
                x
            });
            let s = v.sum();
            v / s
        };
        let r = draw(rows);
        let d = draw(cols);
        starts.push((r, d));
        k += 1;
    }
    starts
}

/// Among candidates within tolerance: smallest attacker payoff, then
/// largest defender payoff, then smallest support, then earliest restart.
fn select(mut accepted: Vec<Candidate>, tie: f64) -> Candidate {
    let f_min = accepted.iter().map(|c| c.f).fold(f64::INFINITY, f64::min);
    accepted.retain(|c| c.f <= f_min + tie);
    let g_max = accepted.iter().map(|c| c.g).fold(f64::NEG_INFINITY, f64::max);
    accepted.retain(|c| c.g >= g_max - tie);
    accepted
        .into_iter()
        .min_by(|a, b| a.support.cmp(&b.support).then(a.restart.cmp(&b.restart)))
        .expect("non-empty")
}

/// Multi-start equilibrium search with direct verification.
pub fn solve_msne(u: &PayoffMatrices, opts: &SolverOptions) -> Result<EquilibriumSolution> {
    opts.validate()?;
    if u.u_a.iter().chain(u.u_d.iter()).any(|v| !v.is_finite()) {
        return Err(Error::validation("payoffs", "contain non-finite entries"));
    }
    let scale = u.scale();
    let tolerance = opts.eps_tol * scale;
    let g = Scaled {
        a: &u.u_a / scale,
        b: &u.u_d / scale,
    };
    let starts = starting_points(u, opts);
    let per_restart: Vec<Vec<Candidate>> = starts
        .par_iter()
        .enumerate()
        .map(|(k, (r0, d0))| {
            let mut out = polish(u, &g, r0, d0, k);
            let (r, d) = local_solve(&g, r0, d0, opts);
            out.extend(polish(u, &g, &r, &d, k));
            out
        })
        .collect();
    let paths: Vec<Vec<Candidate>> = (0..u.rows() + u.cols())
        .into_par_iter()
        .map(|label| match lemke_howson(&g.a, &g.b, label) {
            Some((r, d)) => polish(u, &g, &r, &d, starts.len() + label),
            None => Vec::new(),
        })
        .collect();
    let all: Vec<Candidate> = per_restart.into_iter().chain(paths).flatten().collect();
    let best_epsilon = all.iter().map(|c| c.epsilon).fold(f64::INFINITY, f64::min);
    let accepted: Vec<Candidate> = all.into_iter().filter(|c| c.epsilon <= tolerance).collect();
    if accepted.is_empty() {
        return Err(Error::NonConvergence {
            best_epsilon,
            tolerance,
        });
    }
    let chosen = select(accepted, tolerance);
    log::debug!(
        "equilibrium from restart {} (f = {:.6e}, g = {:.6e}, epsilon = {:.3e})",
        chosen.restart,
        chosen.f,
        chosen.g,
        chosen.epsilon
    );
    assemble(u, chosen.r, chosen.d, tolerance, starts.len())
}
