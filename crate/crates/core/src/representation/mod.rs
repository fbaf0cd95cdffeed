//! Learned history embeddings, clustering into summarizations, and the summarized MDP.

pub mod cluster;
pub mod embedding;
pub mod lemma2;
pub mod loss;
pub mod mds;
pub mod summarized;
pub mod train;

pub use cluster::{cluster, cluster_metric, Aggregator};
pub use embedding::{embed_distance, history_features, EmbeddingTable, Encoder, FeatureEncoder};
pub use lemma2::{lemma2_check, Lemma2Report};
pub use loss::{bisim_loss, bisim_loss_gradient, pair_targets, sample_pairs, PairSample, TargetBatch};
pub use mds::{classical_mds, plant_metric};
pub use summarized::{build_summarized_mdp, fit_learned_models, LearnedModels, SummarizedMdp};
pub use train::{train_representation, train_representation_from, ClusterPolicy, EncoderKind, InnerTrainer, IterationStats, RepresentationConfig, TrainOutput};
