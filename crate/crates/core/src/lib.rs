//! Game-theoretic attack/defense allocation for networked LQR control.
//!
//! The pipeline: enumerate node patterns, solve a structured LQR problem per
//! pattern to get its energy loss, assemble bimatrix payoffs, and solve for a
//! mixed-strategy Nash equilibrium.

pub mod error;
pub mod game;
pub mod linalg;
pub mod lqr;
pub mod model;
pub mod pattern;
pub mod structured;
pub mod sweep;

pub use error::{Error, Result};
pub use game::{
    build_loss_table, build_payoffs, dominant_support, expected_payoffs, solve_msne, support_enumeration_oracle,
    EquilibriumSolution, LossTable, MixedStrategy, PayoffMatrices, SolverOptions, TableConfig, UnstablePolicy,
};
pub use linalg::{is_hurwitz, solve_lyapunov};
pub use lqr::{evaluate_cost, solve_riccati, GainMatrix, LinearSystem, RiccatiSolution, SystemDocument};
pub use model::{build_consensus_q, build_synthetic_network, consensus_laplacian, load_system, save_system, ConsensusLayout, GraphSpec};
pub use pattern::{combine, count_attacked, count_protected, enumerate_patterns, pattern_to_mask, BlockLayout, GainMask, NodePattern};
pub use structured::{cost_and_gradient, find_stabilizing_structured_gain, optimize_structured, OptimizerOptions, StructuredProblem, StructuredSolution};
pub use sweep::{run_sweep, write_csv, SweepRecord, SweepSpec};
