//! Test-system construction: consensus-form state weights, synthetic
//! coupled-oscillator networks, random fixtures, and JSON system files.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spectral_abscissa;
use crate::lqr::{LinearSystem, SystemDocument};
use crate::pattern::BlockLayout;

/// `k·I − 1·1ᵀ`: the quadratic form `xᵀ L x = Σ_{i<j} (x_i − x_j)²`.
pub fn consensus_laplacian(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| if i == j { k as f64 - 1.0 } else { -1.0 })
}

/// Where the angle, frequency, and remaining states live in the native state
/// vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusLayout {
    n_angles: usize,
    n_freqs: usize,
    n_rem: usize,
    /// `permutation[c]` is the native index of canonical state `c`, where the
    /// canonical order is `(δ_1..δ_k, ω_1..ω_k, rem_1..rem_r)`.
    permutation: Vec<usize>,
}

impl ConsensusLayout {
    pub fn new(n_angles: usize, n_freqs: usize, n_rem: usize, permutation: Vec<usize>) -> Result<Self> {
        if n_angles != n_freqs {
            return Err(Error::validation(
                "n_freqs",
                format!("{n_freqs} frequency states but {n_angles} angle states"),
            ));
        }
        let total = n_angles + n_freqs + n_rem;
        if permutation.len() != total {
            return Err(Error::validation(
                "permutation",
                format!("has {} entries, expected {total}", permutation.len()),
            ));
        }
        let mut seen = vec![false; total];
        for &p in &permutation {
            if p >= total || std::mem::replace(&mut seen[p], true) {
                return Err(Error::validation("permutation", "is not a bijection"));
            }
        }
        Ok(ConsensusLayout {
            n_angles,
            n_freqs,
            n_rem,
            permutation,
        })
    }

    /// Canonical order equals native order.
    pub fn identity(n_angles: usize, n_rem: usize) -> Self {
        let total = 2 * n_angles + n_rem;
        ConsensusLayout {
            n_angles,
            n_freqs: n_angles,
            n_rem,
            permutation: (0..total).collect(),
        }
    }

    /// Native order `(δ_1, ω_1, δ_2, ω_2, ...)`, as in the synthetic networks.
    pub fn interleaved(nodes: usize) -> Self {
        let permutation = (0..nodes)
            .map(|i| 2 * i)
            .chain((0..nodes).map(|i| 2 * i + 1))
            .collect();
        ConsensusLayout {
            n_angles: nodes,
            n_freqs: nodes,
            n_rem: 0,
            permutation,
        }
    }

    pub fn n_angles(&self) -> usize {
        self.n_angles
    }
    pub fn n_rem(&self) -> usize {
        self.n_rem
    }
    pub fn total(&self) -> usize {
        self.n_angles + self.n_freqs + self.n_rem
    }
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }
}

/// `blockdiag(L̄, L̄, I)` in canonical order, permuted to native order.
pub fn build_consensus_q(layout: &ConsensusLayout) -> DMatrix<f64> {
    let k = layout.n_angles;
    let lap = consensus_laplacian(k);
    let total = layout.total();
    let mut canon = DMatrix::<f64>::zeros(total, total);
    canon.view_mut((0, 0), (k, k)).copy_from(&lap);
    canon.view_mut((k, k), (k, k)).copy_from(&lap);
    for i in 2 * k..total {
        canon[(i, i)] = 1.0;
    }
    let perm = &layout.permutation;
    let mut q = DMatrix::<f64>::zeros(total, total);
    for a in 0..total {
        for b in 0..total {
            q[(perm[a], perm[b])] = canon[(a, b)];
        }
    }
    q
}

fn default_grounding() -> f64 {
    1.0
}

fn default_jitter() -> f64 {
    0.2
}

/// Coupling graph and physical parameters of a synthetic oscillator network.
///
/// Node indices are 0-based. `grounding` ties the reference node (node 0) to
/// a fixed angle so the common-angle mode is damped and `A` is Hurwitz.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    pub edges: Vec<(usize, usize, f64)>,
    pub damping: f64,
    #[serde(default)]
    pub disturbance_node: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grounding")]
    pub grounding: f64,
    /// Per-node damping is drawn uniformly from `damping · [1 − j, 1 + j]`.
    #[serde(default = "default_jitter")]
    pub damping_jitter: f64,
}

impl GraphSpec {
    /// Ring of `n` nodes with unit weights (a path for n = 2, no edges for n = 1).
    pub fn ring(n: usize, damping: f64, seed: u64) -> Self {
        let edges = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1, 1.0)],
            _ => (0..n).map(|i| (i, (i + 1) % n, 1.0)).collect(),
        };
        GraphSpec {
            n: Some(n),
            edges,
            damping,
            disturbance_node: 0,
            seed,
            grounding: default_grounding(),
            damping_jitter: default_jitter(),
        }
    }

    /// Path `0 – 1 – … – (n−1)` with unit weights.
    pub fn path(n: usize, damping: f64, seed: u64) -> Self {
        GraphSpec {
            edges: (1..n).map(|i| (i - 1, i, 1.0)).collect(),
            ..Self::ring(n, damping, seed)
        }
    }

    pub fn node_count(&self) -> usize {
        self.n.unwrap_or_else(|| {
            self.edges
                .iter()
                .map(|&(i, j, _)| i.max(j) + 1)
                .max()
                .unwrap_or(1)
        })
    }
}

fn component_count(n: usize, edges: &[(usize, usize, f64)]) -> usize {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            cur = std::mem::replace(&mut parent[cur], root);
        }
        root
    }
    for &(i, j, _) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
        }
    }
    (0..n).filter(|&x| find(&mut parent, x) == x).count()
}

/// Second-order oscillator network: per node `δ̇ = ω`,
/// `ω̇ = −Σ_j w_ij (δ_i − δ_j) − d_i ω + u + D w`, with consensus `Q`, `R = I`,
/// and the disturbance entering one node's acceleration equation.
pub fn build_synthetic_network(spec: &GraphSpec) -> Result<LinearSystem> {
    let n = spec.node_count();
    if n == 0 {
        return Err(Error::validation("n", "network needs at least one node"));
    }
    if !(spec.damping > 0.0 && spec.damping.is_finite()) {
        return Err(Error::validation("damping", format!("must be positive, got {}", spec.damping)));
    }
    if !(0.0..1.0).contains(&spec.damping_jitter) {
        return Err(Error::validation("damping_jitter", "must lie in [0, 1)"));
    }
    if !(spec.grounding >= 0.0 && spec.grounding.is_finite()) {
        return Err(Error::validation("grounding", "must be non-negative"));
    }
    if spec.disturbance_node >= n {
        return Err(Error::validation(
            "disturbance_node",
            format!("node {} does not exist in a {n}-node network", spec.disturbance_node),
        ));
    }
    for &(i, j, w) in &spec.edges {
        if i >= n || j >= n || i == j {
            return Err(Error::validation("edges", format!("invalid edge ({i}, {j})")));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(Error::validation("edges", format!("edge ({i}, {j}) has weight {w}")));
        }
    }
    let components = component_count(n, &spec.edges);
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let damping: Vec<f64> = (0..n)
        .map(|_| spec.damping * (1.0 + spec.damping_jitter * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();

    let m = 2 * n;
    let mut a = DMatrix::<f64>::zeros(m, m);
    for i in 0..n {
        a[(2 * i, 2 * i + 1)] = 1.0;
        a[(2 * i + 1, 2 * i + 1)] = -damping[i];
    }
    a[(1, 0)] -= spec.grounding;
    for &(i, j, w) in &spec.edges {
        a[(2 * i + 1, 2 * i)] -= w;
        a[(2 * i + 1, 2 * j)] += w;
        a[(2 * j + 1, 2 * j)] -= w;
        a[(2 * j + 1, 2 * i)] += w;
    }
    let mut b = DMatrix::<f64>::zeros(m, n);
    for i in 0..n {
        b[(2 * i + 1, i)] = 1.0;
    }
    let mut d = DVector::<f64>::zeros(m);
    d[2 * spec.disturbance_node + 1] = 1.0;
    let q = build_consensus_q(&ConsensusLayout::interleaved(n));
    let r = DMatrix::<f64>::identity(n, n);
    let layout = BlockLayout::uniform(n, 2, 1)?;
    LinearSystem::new(a, b, d, q, r, layout)
}

/// Random fixture with `inputs` nodes, one input each, states spread as
/// evenly as possible; `A` is shifted to spectral abscissa −0.3.
///
/// # Panics
/// If `inputs == 0` or `states < inputs`.
pub fn random_stable_system<R: Rng + ?Sized>(rng: &mut R, states: usize, inputs: usize) -> LinearSystem {
    assert!(inputs >= 1 && states >= inputs, "need states >= inputs >= 1");
    let base = states / inputs;
    let extra = states % inputs;
    let sizes: Vec<usize> = (0..inputs).map(|i| base + usize::from(i < extra)).collect();
    let layout = BlockLayout::new(sizes, vec![1; inputs]).expect("valid layout");

    let raw = DMatrix::from_fn(states, states, |_, _| rng.random_range(-1.0..1.0));
    let shift = spectral_abscissa(&raw).expect("finite matrix") + 0.3;
    let a = raw - DMatrix::<f64>::identity(states, states) * shift;
    let b = DMatrix::from_fn(states, inputs, |_, _| rng.random_range(-1.0..1.0));
    let d = DVector::from_fn(states, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(states, states, |_, _| rng.random_range(-1.0..1.0));
    let q = &g * g.transpose() / states as f64 + DMatrix::<f64>::identity(states, states) * 0.1;
    let h = DMatrix::from_fn(inputs, inputs, |_, _| rng.random_range(-0.5..0.5));
    let r = &h * h.transpose() + DMatrix::<f64>::identity(inputs, inputs);
    LinearSystem::new(a, b, d, q, r, layout).expect("random fixture is valid")
}

pub fn load_system(path: impl AsRef<Path>) -> Result<LinearSystem> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let doc: SystemDocument = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    LinearSystem::from_document(doc)
}

pub fn save_system(sys: &LinearSystem, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&sys.to_document())?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_graph_spec(path: impl AsRef<Path>) -> Result<GraphSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}
