//! History-conditioned policies.

use std::collections::HashMap;

use rand::RngCore;

use crate::history::{HistKey, History};
use crate::pomdp::sample_index;

/// A stochastic policy over observation histories.
///
/// Every implementation must return a proper distribution for *every* history,
/// including ones it has never seen (usually by falling back to uniform).
pub trait Policy: Sync {
    fn num_actions(&self) -> usize;

    fn action_probs(&self, history: &History) -> Vec<f64>;

    fn sample_action(&self, history: &History, rng: &mut dyn RngCore) -> usize {
        sample_index(&self.action_probs(history), rng)
    }
}

pub fn uniform(num_actions: usize) -> Vec<f64> {
    vec![1.0 / num_actions as f64; num_actions]
}

pub fn one_hot(num_actions: usize, a: usize) -> Vec<f64> {
    let mut p = vec![0.0; num_actions];
    p[a] = 1.0;
    p
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct UniformPolicy {
    pub num_actions: usize,
}

impl Policy for UniformPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, _history: &History) -> Vec<f64> {
        uniform(self.num_actions)
    }

    fn sample_action(&self, _history: &History, rng: &mut dyn RngCore) -> usize {
        (rng.next_u64() % self.num_actions as u64) as usize
    }
}

/// Deterministic table policy with a uniform fallback on unknown histories.
#[derive(Clone, Debug, Default)]
pub struct DeterministicPolicy {
    pub num_actions: usize,
    pub actions: HashMap<HistKey, usize>,
}

impl Policy for DeterministicPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        match self.actions.get(&history.key()) {
            Some(&a) => one_hot(self.num_actions, a),
            None => uniform(self.num_actions),
        }
    }
}

/// Adapts a closure into a [`Policy`].
pub struct FnPolicy<F> {
    pub num_actions: usize,
    pub f: F,
}

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&History) -> Vec<f64> + Sync,
{
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        (self.f)(history)
    }
}

/// Convex mixture of two policies: `w * first + (1 - w) * second`, evaluated per history.
pub struct MixedPolicy<'a> {
    pub first: &'a dyn Policy,
    pub second: &'a dyn Policy,
    pub weight_first: f64,
}

impl Policy for MixedPolicy<'_> {
    fn num_actions(&self) -> usize {
        self.first.num_actions()
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        let p = self.first.action_probs(history);
        let q = self.second.action_probs(history);
        p.iter()
            .zip(&q)
            .map(|(a, b)| self.weight_first * a + (1.0 - self.weight_first) * b)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn deterministic_falls_back_to_uniform() {
        let mut p = DeterministicPolicy {
            num_actions: 4,
            ..Default::default()
        };
        let h = History::initial(0);
        p.actions.insert(h.key(), 2);
        assert_eq!(p.action_probs(&h), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(p.action_probs(&History::initial(1)), vec![0.25; 4]);
    }
}
