use rayon::prelude::*;

use crate::policy::Policy;
use crate::pomdp::TabularPOMDP;
use crate::sim::{simulate, stream_rng};

/// Sample standard error of the mean (`n - 1` denominator); zero for fewer than two values.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Per-episode returns; episode `i` uses stream `i` of `seed`.
pub fn episode_returns(model: &TabularPOMDP, policy: &dyn Policy, episodes: usize, seed: u64) -> Vec<f64> {
    (0..episodes)
        .into_par_iter()
        .map(|i| simulate(model, policy, &mut stream_rng(seed, i as u64)).total_reward())
        .collect()
}

/// Monte-Carlo `(mean return, standard error)`.
pub fn evaluate_policy_mc(model: &TabularPOMDP, policy: &dyn Policy, episodes: usize, seed: u64) -> (f64, f64) {
    mean_stderr(&episode_returns(model, policy, episodes, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random::random_pomdp;
    use crate::ohmdp::{evaluate_policy_exact, optimal_values};
    use crate::policy::UniformPolicy;
    use crate::pomdp::RewardNoise;

    #[test]
    fn deterministic_has_zero_stderr() {
        let m = TabularPOMDP::new(1, 1, 1, vec![1.0], vec![0.25], vec![1.0], vec![1.0], 4, RewardNoise::Deterministic).unwrap();
        let (mean, se) = evaluate_policy_mc(&m, &UniformPolicy { num_actions: 1 }, 50, 1);
        assert_eq!((mean, se), (1.0, 0.0));
    }

    #[test]
    fn optimal_policy_matches_exact_value() {
        let m = random_pomdp(3, 2, 2, 4, &mut stream_rng(9, 0)).with_reward_noise(RewardNoise::Bernoulli);
        let opt = optimal_values(&m).unwrap();
        let (mean, se) = evaluate_policy_mc(&m, &opt.policy(), 20_000, 3);
        assert!((mean - opt.optimal_return).abs() <= 3.0 * se);
    }

    #[test]
    fn random_policy_matches_exact_value() {
        let m = random_pomdp(3, 3, 2, 3, &mut stream_rng(10, 0)).with_reward_noise(RewardNoise::Bernoulli);
        let pol = UniformPolicy { num_actions: 3 };
        let exact = evaluate_policy_exact(&m, &pol).unwrap();
        let (mean, se) = evaluate_policy_mc(&m, &pol, 100_000, 4);
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact}");
    }

    #[test]
    fn stderr_shrinks_with_more_episodes() {
        let m = random_pomdp(3, 2, 2, 3, &mut stream_rng(11, 0)).with_reward_noise(RewardNoise::Bernoulli);
        let pol = UniformPolicy { num_actions: 2 };
        let (_, se1) = evaluate_policy_mc(&m, &pol, 20_000, 1);
        let (_, se2) = evaluate_policy_mc(&m, &pol, 40_000, 2);
        let ratio = se1 / se2;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }
}
