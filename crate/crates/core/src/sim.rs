//! Episode simulation and seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::history::History;
use crate::policy::Policy;
use crate::pomdp::TabularPOMDP;

/// Independent stream `stream` derived from `root` by counter-based splitting.
pub fn stream_rng(root: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub action: usize,
    pub reward: f64,
    pub next_observation: usize,
}

/// One episode. The history before step `i` is implicit: the initial
/// observation followed by the `(action, next_observation)` pairs of steps `< i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial_observation: usize,
    pub steps: Vec<Step>,
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `(history_before, action, reward, next_observation)` tuples in order.
    pub fn transitions(&self) -> TransitionIter<'_> {
        TransitionIter {
            traj: self,
            history: History::initial(self.initial_observation),
            index: 0,
        }
    }
}

pub struct TransitionIter<'a> {
    traj: &'a Trajectory,
    history: History,
    index: usize,
}

impl<'a> Iterator for TransitionIter<'a> {
    type Item = (History, &'a Step);

    fn next(&mut self) -> Option<Self::Item> {
        let step = self.traj.steps.get(self.index)?;
        let before = self.history.clone();
        self.history.push(step.action, step.next_observation);
        self.index += 1;
        Some((before, step))
    }
}

/// Rolls out one full-horizon episode. Reproducible for a given `rng` state.
pub fn simulate(model: &TabularPOMDP, policy: &dyn Policy, rng: &mut ChaCha8Rng) -> Trajectory {
    let mut s = model.sample_initial_state(rng);
    let o1 = model.sample_observation(s, rng);
    let mut history = History::initial(o1);
    let mut steps = Vec::with_capacity(model.horizon());
    for _ in 0..model.horizon() {
        let a = policy.sample_action(&history, rng);
        let r = model.sample_reward(s, a, rng);
        s = model.sample_next_state(s, a, rng);
        let o = model.sample_observation(s, rng);
        steps.push(Step {
            action: a,
            reward: r,
            next_observation: o,
        });
        history.push(a, o);
    }
    Trajectory {
        initial_observation: o1,
        steps,
        terminal: true,
    }
}

/// Simulates from a caller-supplied seed.
pub fn simulate_seeded(model: &TabularPOMDP, policy: &dyn Policy, seed: u64) -> Trajectory {
    simulate(model, policy, &mut stream_rng(seed, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::UniformPolicy;
    use crate::pomdp::RewardNoise;

    #[test]
    fn deterministic_single_step() {
        let m = TabularPOMDP::new(1, 1, 1, vec![1.0], vec![0.7], vec![1.0], vec![1.0], 1, RewardNoise::Deterministic).unwrap();
        let t = simulate_seeded(&m, &UniformPolicy { num_actions: 1 }, 9);
        assert_eq!(
            t,
            Trajectory {
                initial_observation: 0,
                steps: vec![Step {
                    action: 0,
                    reward: 0.7,
                    next_observation: 0
                }],
                terminal: true
            }
        );
    }

    #[test]
    fn transitions_are_prefix_consistent() {
        let m = crate::envs::random::random_pomdp(3, 2, 2, 4, &mut stream_rng(1, 0));
        let t = simulate_seeded(&m, &UniformPolicy { num_actions: 2 }, 5);
        let tr: Vec<_> = t.transitions().collect();
        for w in tr.windows(2) {
            let (h0, s0) = &w[0];
            assert_eq!(h0.extended(s0.action, s0.next_observation), w[1].0);
        }
        assert_eq!(tr.len(), 4);
    }
}
