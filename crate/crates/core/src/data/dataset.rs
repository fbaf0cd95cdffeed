use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::mixture::MixtureSpec;
use crate::history::History;
use crate::pomdp::{sample_index, TabularPOMDP};
use crate::sim::{simulate, stream_rng, Step, Trajectory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_hash: String,
    pub seed: u64,
    pub num_trajectories: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub policy_id: String,
    pub trajectory: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub records: Vec<TrajectoryRecord>,
}

impl Dataset {
    pub fn empty(model: &TabularPOMDP, seed: u64) -> Self {
        Dataset {
            meta: DatasetMeta {
                env_hash: model.fingerprint(),
                seed,
                num_trajectories: 0,
                num_actions: model.num_actions(),
                num_observations: model.num_observations(),
                horizon: model.horizon(),
            },
            records: Vec::new(),
        }
    }

    pub fn from_trajectories(model: &TabularPOMDP, seed: u64, policy_id: &str, trajectories: Vec<Trajectory>) -> Self {
        let mut d = Dataset::empty(model, seed);
        d.meta.num_trajectories = trajectories.len();
        d.records = trajectories
            .into_iter()
            .enumerate()
            .map(|(i, trajectory)| TrajectoryRecord {
                seed: i as u64,
                policy_id: policy_id.to_string(),
                trajectory,
            })
            .collect();
        d
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_transitions(&self) -> usize {
        self.records.iter().map(|r| r.trajectory.len()).sum()
    }

    /// Flattened `(history_before, step)` tuples in trajectory order.
    pub fn transitions(&self) -> impl Iterator<Item = (History, &Step)> + '_ {
        self.records.iter().flat_map(|r| r.trajectory.transitions())
    }

    /// First `n` trajectories as a new dataset (used for nested-N sweeps).
    pub fn truncated(&self, n: usize) -> Dataset {
        let mut d = self.clone();
        d.records.truncate(n);
        d.meta.num_trajectories = d.records.len();
        d
    }
}

/// Trajectory `i` draws its component and its rollout from stream `i` of `seed`,
/// so the output does not depend on how the work is scheduled.
pub fn generate_dataset(model: &TabularPOMDP, mixture: &MixtureSpec, num_trajectories: usize, seed: u64) -> Dataset {
    let weights = mixture.weights();
    let records = (0..num_trajectories)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let k = sample_index(&weights, &mut rng);
            let component = &mixture.components[k];
            TrajectoryRecord {
                seed: i as u64,
                policy_id: component.id.clone(),
                trajectory: simulate(model, component.policy.as_ref(), &mut rng),
            }
        })
        .collect();
    let mut d = Dataset::empty(model, seed);
    d.meta.num_trajectories = num_trajectories;
    d.records = records;
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::mixture::MixtureComponent;
    use crate::envs::random::random_pomdp;
    use crate::policy::{FnPolicy, UniformPolicy};
    use crate::pomdp::RewardNoise;
    use std::sync::Arc;

    #[test]
    fn one_action_model_gives_identical_action_sequences() {
        let m = TabularPOMDP::new(2, 1, 2, vec![0.5; 4], vec![0.3, 0.6], vec![0.5; 4], vec![0.5, 0.5], 4, RewardNoise::Deterministic).unwrap();
        let d = generate_dataset(&m, &MixtureSpec::uniform_random(1), 50, 2);
        assert!(d.records.iter().all(|r| r.trajectory.steps.iter().all(|s| s.action == 0)));
        assert_eq!(d.num_transitions(), 200);
    }

    #[test]
    fn empty_dataset_has_metadata() {
        let m = random_pomdp(2, 2, 2, 3, &mut stream_rng(0, 0));
        let d = generate_dataset(&m, &MixtureSpec::uniform_random(2), 0, 7);
        assert!(d.is_empty());
        assert_eq!(d.meta.seed, 7);
        assert_eq!(d.meta.env_hash, m.fingerprint());
    }

    #[test]
    fn mixture_component_counts_are_binomial() {
        let m = random_pomdp(2, 2, 2, 1, &mut stream_rng(0, 0));
        let zero = Arc::new(FnPolicy {
            num_actions: 2,
            f: |_: &History| vec![1.0, 0.0],
        });
        let mix = MixtureSpec::new(vec![
            MixtureComponent {
                id: "a".into(),
                weight: 0.5,
                policy: Arc::new(UniformPolicy { num_actions: 2 }),
            },
            MixtureComponent {
                id: "b".into(),
                weight: 0.5,
                policy: zero,
            },
        ])
        .unwrap();
        let n = 10_000;
        let d = generate_dataset(&m, &mix, n, 1);
        let a = d.records.iter().filter(|r| r.policy_id == "a").count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((a - 5000.0).abs() <= 3.0 * sigma, "count {a}");
    }

    #[test]
    fn generation_is_reproducible() {
        let m = random_pomdp(3, 2, 2, 4, &mut stream_rng(0, 0));
        let a = generate_dataset(&m, &MixtureSpec::uniform_random(2), 40, 9);
        let b = generate_dataset(&m, &MixtureSpec::uniform_random(2), 40, 9);
        assert_eq!(a, b);
    }
}
