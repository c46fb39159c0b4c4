//! Payoff matrices, mixed strategies, and expected payoffs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::loss::LossTable;
use crate::error::{Error, Result};
use crate::pattern::{combine, count_attacked, count_protected, enumerate_patterns, NodePattern};

/// Probability vector over a player's actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixedStrategy {
    probs: DVector<f64>,
}

impl MixedStrategy {
    /// Entries down to −1e-12 are clamped to zero; the sum must be 1 within
    /// 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::validation("strategy", "is empty"));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < -1e-12) {
            return Err(Error::validation("strategy", format!("has entry {p}")));
        }
        let probs: Vec<f64> = probs.into_iter().map(|p| p.max(0.0)).collect();
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation("strategy", format!("sums to {sum}")));
        }
        Ok(MixedStrategy {
            probs: DVector::from_vec(probs),
        })
    }

    pub fn pure(len: usize, index: usize) -> Self {
        let mut probs = DVector::zeros(len);
        probs[index] = 1.0;
        MixedStrategy { probs }
    }

    pub fn uniform(len: usize) -> Self {
        MixedStrategy {
            probs: DVector::from_element(len, 1.0 / len as f64),
        }
    }

    pub(crate) fn from_vector_unchecked(probs: DVector<f64>) -> Self {
        MixedStrategy { probs }
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn support_size(&self, threshold: f64) -> usize {
        self.probs.iter().filter(|&&p| p > threshold).count()
    }
}

impl TryFrom<Vec<f64>> for MixedStrategy {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        MixedStrategy::new(v)
    }
}

impl From<MixedStrategy> for Vec<f64> {
    fn from(s: MixedStrategy) -> Self {
        s.probs.iter().copied().collect()
    }
}

/// Bimatrix game: row player = attacker, column player = defender.
#[derive(Clone, Debug, PartialEq)]
pub struct PayoffMatrices {
    pub u_a: DMatrix<f64>,
    pub u_d: DMatrix<f64>,
    pub gamma_a: f64,
    pub gamma_d: f64,
    /// Expanded loss `Δ[i][j] = Δ_{a_i ∨ p_j}`.
    pub(crate) delta: DMatrix<f64>,
    pub(crate) attacked: DVector<f64>,
    pub(crate) protected: DVector<f64>,
}

impl PayoffMatrices {
    /// A game given directly by its matrices; all of `U_a` counts as loss and
    /// the action costs are zero.
    pub fn from_matrices(u_a: DMatrix<f64>, u_d: DMatrix<f64>) -> Result<Self> {
        if u_a.shape() != u_d.shape() || u_a.is_empty() {
            return Err(Error::Dimension(format!(
                "payoff shapes {:?} and {:?}",
                u_a.shape(),
                u_d.shape()
            )));
        }
        if u_a.iter().chain(u_d.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("payoffs", "contain non-finite entries"));
        }
        let (rows, cols) = u_a.shape();
        Ok(PayoffMatrices {
            delta: u_a.clone(),
            u_a,
            u_d,
            gamma_a: 0.0,
            gamma_d: 0.0,
            attacked: DVector::zeros(rows),
            protected: DVector::zeros(cols),
        })
    }

    pub fn rows(&self) -> usize {
        self.u_a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.u_a.ncols()
    }

    /// `max(1, max|U_a|, max|U_d|)`.
    pub fn scale(&self) -> f64 {
        self.u_a
            .iter()
            .chain(self.u_d.iter())
            .fold(1.0, |m, v| m.max(v.abs()))
    }
}

/// `U_a[i][j] = Δ_{a_i ∨ p_j} − γ_a·#attacked(a_i)`,
/// `U_d[i][j] = −Δ_{a_i ∨ p_j} − γ_d·#protected(p_j)`.
pub fn build_payoffs(table: &LossTable, gamma_a: f64, gamma_d: f64) -> Result<PayoffMatrices> {
    for (name, g) in [("gamma_a", gamma_a), ("gamma_d", gamma_d)] {
        if !(g.is_finite() && g >= 0.0) {
            return Err(Error::validation(name, format!("must be finite and non-negative, got {g}")));
        }
    }
    let patterns = enumerate_patterns(table.node_count())?;
    let n = patterns.len();
    let mut delta = DMatrix::<f64>::zeros(n, n);
    for (i, a) in patterns.iter().enumerate() {
        for (j, p) in patterns.iter().enumerate() {
            delta[(i, j)] = table.delta(&combine(a, p)?);
        }
    }
    let attacked = DVector::from_iterator(n, patterns.iter().map(|a| count_attacked(a) as f64));
    let protected = DVector::from_iterator(n, patterns.iter().map(|p| count_protected(p) as f64));
    let u_a = DMatrix::from_fn(n, n, |i, j| delta[(i, j)] - gamma_a * attacked[i]);
    let u_d = DMatrix::from_fn(n, n, |i, j| -delta[(i, j)] - gamma_d * protected[j]);
    Ok(PayoffMatrices {
        u_a,
        u_d,
        gamma_a,
        gamma_d,
        delta,
        attacked,
        protected,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedPayoffs {
    pub e_a: f64,
    pub e_d: f64,
    pub e_loss: f64,
    pub e_cost_a: f64,
    pub e_cost_d: f64,
}

fn check_lengths(r: &MixedStrategy, d: &MixedStrategy, u: &PayoffMatrices) -> Result<()> {
    if r.len() != u.rows() || d.len() != u.cols() {
        return Err(Error::Dimension(format!(
            "strategies of length {} and {} against a {}x{} game",
            r.len(),
            d.len(),
            u.rows(),
            u.cols()
        )));
    }
    Ok(())
}

/// Expected payoffs, with the expected loss computed from the table itself.
pub fn expected_payoffs(
    r: &MixedStrategy,
    d: &MixedStrategy,
    u: &PayoffMatrices,
    table: &LossTable,
) -> Result<ExpectedPayoffs> {
    check_lengths(r, d, u)?;
    if table.len() != u.rows() {
        return Err(Error::Dimension(format!(
            "table with {} patterns against a {}-action game",
            table.len(),
            u.rows()
        )));
    }
    let n = table.node_count();
    let mut e_loss = 0.0;
    for (i, ri) in r.probs().iter().enumerate() {
        if *ri == 0.0 {
            continue;
        }
        let a = NodePattern::from_index(n, i)?;
        for (j, dj) in d.probs().iter().enumerate() {
            let p = NodePattern::from_index(n, j)?;
            e_loss += ri * dj * table.delta(&combine(&a, &p)?);
        }
    }
    Ok(ExpectedPayoffs {
        e_a: bilinear(r.probs(), &u.u_a, d.probs()),
        e_d: bilinear(r.probs(), &u.u_d, d.probs()),
        e_loss,
        e_cost_a: u.gamma_a * r.probs().dot(&u.attacked),
        e_cost_d: u.gamma_d * d.probs().dot(&u.protected),
    })
}

/// Expected payoffs using the loss matrix stored in the game.
pub fn expected_payoffs_from_game(r: &MixedStrategy, d: &MixedStrategy, u: &PayoffMatrices) -> Result<ExpectedPayoffs> {
    check_lengths(r, d, u)?;
    Ok(ExpectedPayoffs {
        e_a: bilinear(r.probs(), &u.u_a, d.probs()),
        e_d: bilinear(r.probs(), &u.u_d, d.probs()),
        e_loss: bilinear(r.probs(), &u.delta, d.probs()),
        e_cost_a: u.gamma_a * r.probs().dot(&u.attacked),
        e_cost_d: u.gamma_d * d.probs().dot(&u.protected),
    })
}

pub(crate) fn bilinear(r: &DVector<f64>, m: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    r.dot(&(m * d))
}

/// Patterns played with probability at least `threshold`, most likely first
/// (ties in index order).
pub fn dominant_support(strategy: &MixedStrategy, threshold: f64) -> Result<Vec<(NodePattern, f64)>> {
    let len = strategy.len();
    if !len.is_power_of_two() || len < 2 {
        return Err(Error::Dimension(format!("strategy over {len} actions is not over 2^n patterns")));
    }
    let n = len.trailing_zeros() as usize;
    let mut out = strategy
        .probs()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p >= threshold)
        .map(|(m, &p)| Ok((NodePattern::from_index(n, m)?, p)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 0.03;

/// `"011:0.950000;111:0.050000"`.
pub fn support_digest(strategy: &MixedStrategy, threshold: f64) -> Result<String> {
    Ok(dominant_support(strategy, threshold)?
        .iter()
        .map(|(p, w)| format!("{p}:{w:.6}"))
        .collect::<Vec<_>>()
        .join(";"))
}
