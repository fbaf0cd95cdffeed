//! Offline learners and policy evaluation.

pub mod bc;
pub mod cql;
pub mod eval;

pub use bc::filtered_bc;
pub use cql::{tabular_cql, Bootstrap, CqlConfig, LearnedPolicy};
pub use eval::{evaluate_policy_mc, mean_stderr};
