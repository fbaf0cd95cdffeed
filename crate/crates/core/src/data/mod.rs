//! Behavior mixtures, offline datasets and the estimates built from them.

pub mod concentrability;
pub mod dataset;
pub mod empirical;
pub mod io;
pub mod mixture;

pub use concentrability::{compute_concentrability, compute_concentrability_empirical, Concentrability};
pub use dataset::{generate_dataset, Dataset, DatasetMeta, TrajectoryRecord};
pub use empirical::{estimate_behavior, estimate_empirical, ActionStats, BehaviorEstimate, EmpiricalModel};
pub use io::{load_dataset, save_dataset};
pub use mixture::{EpsilonGreedy, MixtureComponent, MixtureSpec};
