//! Optional TOML configuration file.
//!
//! ```toml
//! threads = 4
//!
//! [table]
//! self_links_intact = false
//! unstable_policy = "cap"
//! max_nodes = 16
//!
//! [optimizer]
//! grad_tol = 1e-6
//! max_iters = 5000
//!
//! [solver]
//! restarts = 20
//! eps_tol = 1e-6
//! seed = 0
//! ```
//!
//! Every key is optional. Command-line flags override the file, and the file
//! overrides built-in defaults.

use std::path::Path;

use cyberlqr_core::{Error, OptimizerOptions, SolverOptions, UnstablePolicy};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub threads: Option<usize>,
    pub table: TableSection,
    pub optimizer: OptimizerOptions,
    pub solver: SolverOptions,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSection {
    pub self_links_intact: Option<bool>,
    pub unstable_policy: Option<UnstablePolicy>,
    pub max_nodes: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}
