//! Tabular offline reinforcement learning over observation histories.
//!
//! The crate covers the full pipeline: POMDP models and exact history-MDP
//! oracles, offline datasets, pessimistic value iteration, exact bisimulation
//! metrics, embedding-based history aggregation, baseline agents and an
//! experiment harness.

pub mod agents;
pub mod bisim;
pub mod data;
pub mod envs;
pub mod error;
pub mod harness;
pub mod history;
pub mod layered;
pub mod ohmdp;
pub mod pevi;
pub mod policy;
pub mod pomdp;
pub mod representation;
pub mod sim;

pub use error::{Error, Result};
pub use history::{HistKey, History};
pub use pomdp::{Belief, RewardNoise, TabularPOMDP};
