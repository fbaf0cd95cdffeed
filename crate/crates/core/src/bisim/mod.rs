//! Exact Wasserstein-1 transport and on-policy bisimulation metrics.

pub mod metric;
pub mod transport;

pub use metric::{exact_bisim_metric, value_difference_check, DepthIndexedMetric, MetricLayer, ValueDifferenceReport};
pub use transport::{tv_distance, tv_distance_sparse, wasserstein1_discrete, DiscreteDistribution, TransportPlan};
