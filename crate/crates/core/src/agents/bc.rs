//! Filtered behavior cloning.

use std::collections::HashMap;

use crate::agents::cql::LearnedPolicy;
use crate::data::dataset::Dataset;
use crate::error::{Error, Result};

/// Indices of the `ceil(keep_fraction * N)` highest-return trajectories; ties keep the lower index.
pub fn top_trajectories(dataset: &Dataset, keep_fraction: f64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep fraction must be in (0, 1], got {keep_fraction}")));
    }
    let n = dataset.len();
    let keep = ((keep_fraction * n as f64).ceil() as usize).min(n);
    let returns: Vec<f64> = dataset.records.iter().map(|r| r.trajectory.total_reward()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| returns[j].total_cmp(&returns[i]).then(i.cmp(&j)));
    order.truncate(keep);
    order.sort_unstable();
    Ok(order)
}

/// Maximum-likelihood action distribution per history over the kept trajectories.
pub fn filtered_bc(dataset: &Dataset, keep_fraction: f64) -> Result<LearnedPolicy> {
    let na = dataset.meta.num_actions;
    let mut counts: HashMap<_, Vec<u64>> = HashMap::new();
    for i in top_trajectories(dataset, keep_fraction)? {
        for (history, step) in dataset.records[i].trajectory.transitions() {
            counts.entry(history.key()).or_insert_with(|| vec![0; na])[step.action] += 1;
        }
    }
    let table = counts
        .into_iter()
        .map(|(k, c)| {
            let total: u64 = c.iter().sum();
            (k, c.iter().map(|&x| x as f64 / total as f64).collect())
        })
        .collect();
    Ok(LearnedPolicy { num_actions: na, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::generate_dataset;
    use crate::data::empirical::estimate_behavior;
    use crate::data::mixture::MixtureSpec;
    use crate::envs::random::random_pomdp;
    use crate::policy::{one_hot, Policy};
    use crate::sim::{stream_rng, Step, Trajectory};

    #[test]
    fn full_fraction_is_behavior_estimate() {
        let m = random_pomdp(3, 3, 2, 3, &mut stream_rng(1, 0));
        let d = generate_dataset(&m, &MixtureSpec::uniform_random(3), 80, 2);
        let bc = filtered_bc(&d, 1.0).unwrap();
        let beta = estimate_behavior(&d);
        for (h, _) in d.transitions() {
            let (p, q) = (bc.action_probs(&h), beta.action_probs(&h));
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_best_trajectory_is_cloned() {
        let m = random_pomdp(2, 2, 2, 2, &mut stream_rng(1, 0));
        let traj = |a: usize, r: f64| Trajectory {
            initial_observation: 0,
            steps: vec![
                Step { action: a, reward: r, next_observation: 1 },
                Step { action: a, reward: r, next_observation: 1 },
            ],
            terminal: true,
        };
        let d = Dataset::from_trajectories(&m, 0, "t", vec![traj(0, 0.0), traj(1, 1.0), traj(0, 0.2)]);
        let bc = filtered_bc(&d, 1.0 / 3.0).unwrap();
        for (h, _) in d.records[1].trajectory.transitions() {
            assert_eq!(bc.action_probs(&h), one_hot(2, 1));
        }
    }

    #[test]
    fn keeps_exact_quarter_matching_sort_oracle() {
        let m = random_pomdp(2, 2, 2, 1, &mut stream_rng(1, 0));
        let trajs: Vec<Trajectory> = (0..100)
            .map(|i| Trajectory {
                initial_observation: 0,
                steps: vec![Step { action: 0, reward: ((i * 37) % 100) as f64 / 100.0, next_observation: 0 }],
                terminal: true,
            })
            .collect();
        let d = Dataset::from_trajectories(&m, 0, "t", trajs);
        let kept = top_trajectories(&d, 0.25).unwrap();
        assert_eq!(kept.len(), 25);
        let mut oracle: Vec<(i64, usize)> = (0..100).map(|i| (-(((i * 37) % 100) as i64), i)).collect();
        oracle.sort();
        let mut expected: Vec<usize> = oracle[..25].iter().map(|e| e.1).collect();
        expected.sort();
        assert_eq!(kept, expected);
        assert!(filtered_bc(&d, 0.0).is_err());
        assert!(filtered_bc(&d, 1.5).is_err());
    }
}
