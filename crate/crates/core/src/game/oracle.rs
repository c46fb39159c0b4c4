//! Exhaustive equilibrium enumeration for small games.
//!
//! Enumerates the vertices of both best-response polytopes
//! `{(y, u) : M y ≤ u·1, y ≥ 0, Σy = 1}` by solving every square system of
//! tight constraints, then keeps the complementary vertex pairs. This finds
//! every extreme equilibrium, degenerate games included.

use nalgebra::{DMatrix, DVector};

use super::nash::{assemble, EquilibriumSolution};
use super::payoff::PayoffMatrices;
use crate::error::{Error, Result};

/// Largest action count accepted by the oracle.
pub const ORACLE_MAX_ACTIONS: usize = 16;

const TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
struct Vertex {
    y: DVector<f64>,
    u: f64,
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] < n - k + i) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Vertices of `{(y, u) : M y ≤ u·1, y ≥ 0, Σy = 1}` with `M` scaled to
/// [−1, 1].
fn vertices(m: &DMatrix<f64>) -> Vec<Vertex> {
    let (rows, cols) = m.shape();
    let dim = cols + 1;
    let mut out: Vec<Vertex> = Vec::new();
    combinations(rows + cols, cols, |tight| {
        let mut sys = DMatrix::<f64>::zeros(dim, dim);
        let mut rhs = DVector::<f64>::zeros(dim);
        for (k, &c) in tight.iter().enumerate() {
            if c < rows {
                for j in 0..cols {
                    sys[(k, j)] = m[(c, j)];
                }
                sys[(k, cols)] = -1.0;
            } else {
                sys[(k, c - rows)] = 1.0;
            }
        }
        for j in 0..cols {
            sys[(cols, j)] = 1.0;
        }
        rhs[cols] = 1.0;
        let sv = sys.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-10 * sv.max() {
            return;
        }
        let Some(z) = sys.lu().solve(&rhs) else {
            return;
        };
        let y = z.rows(0, cols).clone_owned();
        let u = z[cols];
        if y.iter().any(|&v| v < -TOL) || (m * &y).iter().any(|&v| v > u + TOL) {
            return;
        }
        let y = y.map(|v| v.max(0.0));
        let y = &y / y.sum();
        if !out.iter().any(|v| (&v.y - &y).amax() <= TOL && (v.u - u).abs() <= TOL) {
            out.push(Vertex { y, u });
        }
    });
    out
}

/// Every extreme equilibrium of the game, in vertex-enumeration order.
pub fn support_enumeration_oracle(game: &PayoffMatrices) -> Result<Vec<EquilibriumSolution>> {
    let n = game.rows().max(game.cols());
    if n > ORACLE_MAX_ACTIONS {
        return Err(Error::Capacity {
            what: "action count for exhaustive enumeration",
            got: n,
            limit: ORACLE_MAX_ACTIONS,
        });
    }
    let scale = game.scale();
    let a = &game.u_a / scale;
    let b = &game.u_d / scale;
    // Defender strategies d against the attacker's payoffs, and vice versa.
    let d_vertices = vertices(&a);
    let r_vertices = vertices(&b.transpose());
    let tolerance = 1e-6 * scale;

    let mut out = Vec::new();
    for rv in &r_vertices {
        let br = b.tr_mul(&rv.y);
        for dv in &d_vertices {
            let ad = &a * &dv.y;
            let attacker_ok = (0..a.nrows()).all(|i| rv.y[i] <= TOL || ad[i] >= dv.u - TOL);
            let defender_ok = (0..a.ncols()).all(|j| dv.y[j] <= TOL || br[j] >= rv.u - TOL);
            if attacker_ok && defender_ok {
                out.push(assemble(game, rv.y.clone(), dv.y.clone(), tolerance, 0)?);
            }
        }
    }
    Ok(out)
}
