//! The attacker/defender game: loss table, payoffs, and equilibria.

mod lemke;
pub mod loss;
mod lp;
pub mod nash;
pub mod oracle;
pub mod payoff;

pub use loss::{build_loss_table, load_or_build_table, table_key, LossEntry, LossStatus, LossTable, TableConfig, UnstablePolicy};
pub use nash::{best_response_gap, solve_msne, EquilibriumSolution, SolverOptions};
pub use oracle::{support_enumeration_oracle, ORACLE_MAX_ACTIONS};
pub use payoff::{
    build_payoffs, dominant_support, expected_payoffs, expected_payoffs_from_game, support_digest, ExpectedPayoffs,
    MixedStrategy, PayoffMatrices, DEFAULT_SUPPORT_THRESHOLD,
};
