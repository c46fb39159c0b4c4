//! Per-pattern energy losses and their on-disk cache.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lqr::{solve_riccati, GainMatrix, LinearSystem};
use crate::pattern::{enumerate_patterns_capped, pattern_to_mask, NodePattern, DEFAULT_MAX_NODES};
use crate::structured::{optimize_structured_with_starts, OptimizerOptions, StructuredProblem};

/// What to record for a pattern under which no stabilizing gain exists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnstablePolicy {
    /// `factor` times the largest finite loss in the table (or times `J_lqr`
    /// when every finite loss is zero).
    CapFactor(f64),
    /// A fixed loss value.
    CapValue(f64),
    /// Abort on the first such pattern.
    Error,
}

impl Default for UnstablePolicy {
    fn default() -> Self {
        UnstablePolicy::CapFactor(100.0)
    }
}

impl fmt::Display for UnstablePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnstablePolicy::CapFactor(x) => write!(f, "cap-factor:{x}"),
            UnstablePolicy::CapValue(v) => write!(f, "cap:{v}"),
            UnstablePolicy::Error => f.write_str("error"),
        }
    }
}

impl FromStr for UnstablePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let number = |v: &str| -> Result<f64> {
            let x: f64 = v
                .parse()
                .map_err(|_| Error::Parse(format!("unstable policy {s:?}: {v:?} is not a number")))?;
            if x.is_finite() && x > 0.0 {
                Ok(x)
            } else {
                Err(Error::validation("unstable_policy", format!("cap must be positive, got {v}")))
            }
        };
        match s {
            "error" => Ok(UnstablePolicy::Error),
            "cap" => Ok(UnstablePolicy::default()),
            _ => {
                if let Some(v) = s.strip_prefix("cap-factor:") {
                    Ok(UnstablePolicy::CapFactor(number(v)?))
                } else if let Some(v) = s.strip_prefix("cap:") {
                    Ok(UnstablePolicy::CapValue(number(v)?))
                } else {
                    Err(Error::Parse(format!(
                        "unstable policy {s:?}: expected cap, cap:<value>, cap-factor:<factor> or error"
                    )))
                }
            }
        }
    }
}

impl Serialize for UnstablePolicy {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for UnstablePolicy {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Everything besides the system that determines a loss table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub self_links_disabled: bool,
    pub unstable_policy: UnstablePolicy,
    pub optimizer: OptimizerOptions,
    /// Refuse systems with more nodes than this. Does not affect the table,
    /// so it is neither hashed nor stored.
    #[serde(skip, default = "default_max_nodes")]
    pub max_nodes: usize,
}

fn default_max_nodes() -> usize {
    DEFAULT_MAX_NODES
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            self_links_disabled: true,
            unstable_policy: UnstablePolicy::default(),
            optimizer: OptimizerOptions::default(),
            max_nodes: DEFAULT_MAX_NODES,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossStatus {
    Exact,
    UnstableCapped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub pattern: NodePattern,
    pub delta: f64,
    pub status: LossStatus,
}

/// Loss `Δ_s = J(K*_s) − J(K_lqr)` for every resulting pattern `s`, stored
/// in pattern-index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub system_hash: String,
    pub j_lqr: f64,
    pub entries: Vec<LossEntry>,
    pub config: TableConfig,
}

impl LossTable {
    /// Builds a table from raw losses in pattern-index order.
    pub fn from_deltas(j_lqr: f64, deltas: &[f64]) -> Result<Self> {
        let n = deltas.len().trailing_zeros() as usize;
        if deltas.len() != 1 << n || n == 0 {
            return Err(Error::Dimension(format!(
                "{} losses is not 2^n for any n >= 1",
                deltas.len()
            )));
        }
        let entries = deltas
            .iter()
            .enumerate()
            .map(|(m, &delta)| {
                Ok(LossEntry {
                    pattern: NodePattern::from_index(n, m)?,
                    delta,
                    status: LossStatus::Exact,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let table = LossTable {
            system_hash: String::new(),
            j_lqr,
            entries,
            config: TableConfig::default(),
        };
        table.validate()?;
        Ok(table)
    }

    pub fn node_count(&self) -> usize {
        self.entries.len().trailing_zeros() as usize
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn delta(&self, s: &NodePattern) -> f64 {
        self.entries[s.index()].delta
    }

    pub fn status(&self, s: &NodePattern) -> LossStatus {
        self.entries[s.index()].status
    }

    pub fn max_delta(&self) -> f64 {
        self.entries.iter().map(|e| e.delta).fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.entries.len();
        if len < 2 || !len.is_power_of_two() {
            return Err(Error::Dimension(format!("loss table has {len} entries, expected 2^n")));
        }
        let n = self.node_count();
        if !(self.j_lqr.is_finite() && self.j_lqr >= 0.0) {
            return Err(Error::validation("j_lqr", format!("must be finite and non-negative, got {}", self.j_lqr)));
        }
        for (m, e) in self.entries.iter().enumerate() {
            if e.pattern.len() != n || e.pattern.index() != m {
                return Err(Error::validation(
                    "entries",
                    format!("entry {m} has pattern {}, expected index order", e.pattern),
                ));
            }
            if !(e.delta.is_finite() && e.delta >= 0.0) {
                return Err(Error::validation(
                    "entries",
                    format!("pattern {} has loss {}", e.pattern, e.delta),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let table: LossTable =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        // Write-then-rename so concurrent readers never see a partial file.
        let path = path.as_ref();
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Content hash of everything that determines the table.
pub fn table_key(sys: &LinearSystem, config: &TableConfig) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(&sys.to_document())?);
    hasher.update(serde_json::to_vec(config)?);
    Ok(hex::encode(hasher.finalize()))
}

struct PatternOutcome {
    j: Option<f64>,
    gain: Option<GainMatrix>,
}

fn solve_levels(
    sys: &LinearSystem,
    n: usize,
    self_links_disabled: bool,
    options: &OptimizerOptions,
    seeds: Option<&[Option<GainMatrix>]>,
    abort_on_unstable: bool,
) -> Result<Vec<PatternOutcome>> {
    let lqr = solve_riccati(sys)?;
    // The caller has already applied the configured node cap.
    let patterns = enumerate_patterns_capped(n, usize::MAX)?;
    let mut outcomes: Vec<Option<PatternOutcome>> = (0..patterns.len()).map(|_| None).collect();

    // Fewest ones first, so every child (one more zero, smaller mask) is
    // solved before its parents and can seed them.
    for ones in 0..=n {
        let level: Vec<NodePattern> = patterns.iter().copied().filter(|s| s.count_ones() == ones).collect();
        let solved: Vec<(usize, Result<PatternOutcome>)> = level
            .par_iter()
            .map(|s| {
                if s.is_all_ones() {
                    let j = sys.d().dot(&(&lqr.p * sys.d()));
                    return (s.index(), Ok(PatternOutcome { j: Some(j), gain: Some(lqr.k.clone()) }));
                }
                let mut warm: Vec<GainMatrix> = s
                    .children()
                    .filter_map(|c| outcomes[c.index()].as_ref().and_then(|o| o.gain.clone()))
                    .collect();
                if let Some(Some(k)) = seeds.map(|g| &g[s.index()]) {
                    warm.push(k.clone());
                }
                let outcome = pattern_to_mask(s, sys.layout(), self_links_disabled)
                    .and_then(|mask| StructuredProblem::new(sys, mask, options.clone()))
                    .and_then(|problem| optimize_structured_with_starts(&problem, &warm));
                let outcome = match outcome {
                    Ok(sol) => {
                        debug!("pattern {s}: J = {:.6e} via {:?} in {} iterations", sol.j_star, sol.initializer, sol.iterations);
                        Ok(PatternOutcome { j: Some(sol.j_star), gain: Some(sol.k_star) })
                    }
                    Err(Error::PatternNotStabilizable { .. }) if !abort_on_unstable => {
                        debug!("pattern {s}: no stabilizing structured gain");
                        Ok(PatternOutcome { j: None, gain: None })
                    }
                    Err(Error::PatternNotStabilizable { .. }) => {
                        Err(Error::PatternNotStabilizable { pattern: s.to_string() })
                    }
                    Err(e) => Err(Error::Numerical(format!("pattern {s}: {e}"))),
                };
                (s.index(), outcome)
            })
            .collect();
        // Report the lowest-index failure so errors are deterministic.
        let mut solved = solved;
        solved.sort_by_key(|(m, _)| *m);
        for (m, outcome) in solved {
            outcomes[m] = Some(outcome?);
        }
    }
    Ok(outcomes.into_iter().map(|o| o.expect("every level solved")).collect())
}

/// Solves the structured problem for every pattern and records its loss.
///
/// Each pattern is warm-started from the optima of its children, so a
/// less constrained pattern never reports a larger loss than a more
/// constrained one. With self links intact, each pattern is also seeded with
/// its self-links-disabled optimum.
pub fn build_loss_table(sys: &LinearSystem, config: &TableConfig) -> Result<LossTable> {
    config.optimizer.validate()?;
    let n = sys.node_count();
    enumerate_patterns_capped(n, config.max_nodes)?;
    let abort = config.unstable_policy == UnstablePolicy::Error;
    let seeds = if config.self_links_disabled {
        None
    } else {
        let disabled = solve_levels(sys, n, true, &config.optimizer, None, false)?;
        Some(disabled.into_iter().map(|o| o.gain).collect::<Vec<_>>())
    };
    let outcomes = solve_levels(sys, n, config.self_links_disabled, &config.optimizer, seeds.as_deref(), abort)?;

    let lqr = solve_riccati(sys)?;
    let j_lqr = sys.d().dot(&(&lqr.p * sys.d()));
    let finite_max = outcomes
        .iter()
        .filter_map(|o| o.j)
        .map(|j| (j - j_lqr).max(0.0))
        .fold(0.0, f64::max);
    let cap = match config.unstable_policy {
        UnstablePolicy::CapFactor(f) if finite_max > 0.0 => f * finite_max,
        UnstablePolicy::CapFactor(f) => f * j_lqr.max(1.0),
        UnstablePolicy::CapValue(v) => v,
        UnstablePolicy::Error => f64::NAN,
    };
    let entries = outcomes
        .iter()
        .enumerate()
        .map(|(m, o)| {
            let pattern = NodePattern::from_index(n, m)?;
            Ok(match o.j {
                Some(_) if pattern.is_all_ones() => LossEntry { pattern, delta: 0.0, status: LossStatus::Exact },
                Some(j) => LossEntry { pattern, delta: (j - j_lqr).max(0.0), status: LossStatus::Exact },
                None => LossEntry { pattern, delta: cap, status: LossStatus::UnstableCapped },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let capped = entries.iter().filter(|e| e.status == LossStatus::UnstableCapped).count();
    if capped > 0 {
        info!("{capped} pattern(s) admit no stabilizing gain; loss capped at {cap:.6e}");
    }
    let table = LossTable {
        system_hash: table_key(sys, config)?,
        j_lqr,
        entries,
        config: config.clone(),
    };
    table.validate()?;
    Ok(table)
}

/// Loads the table at `path` when its hash matches, otherwise builds and
/// writes it. Returns whether the cache was hit.
pub fn load_or_build_table(sys: &LinearSystem, config: &TableConfig, path: &Path) -> Result<(LossTable, bool)> {
    let key = table_key(sys, config)?;
    if path.exists() {
        match LossTable::load(path) {
            Ok(table) if table.system_hash == key => {
                info!("cache hit: {} matches system hash {}", path.display(), &key[..12]);
                return Ok((table, true));
            }
            Ok(_) => info!("cache stale: {} has a different system hash", path.display()),
            Err(e) => info!("cache unreadable ({e}); rebuilding"),
        }
    }
    let table = build_loss_table(sys, config)?;
    table.save(path)?;
    Ok((table, false))
}
