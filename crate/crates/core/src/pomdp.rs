//! Finite POMDP models and exact Bayes filtering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardNoise {
    /// Realized reward equals the mean.
    Deterministic,
    /// Realized reward is Bernoulli(mean).
    Bernoulli,
}

/// Tuple `(S, A, O, T, r, E, mu1, H)` with dense row-major tensors.
///
/// Immutable after construction; share freely across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TabularPOMDP {
    num_states: usize,
    num_actions: usize,
    num_observations: usize,
    /// `T(s'|s,a)` at `(s * A + a) * S + s'`.
    transition: Vec<f64>,
    /// `r(s,a)` at `s * A + a`.
    reward_mean: Vec<f64>,
    /// `E(o|s)` at `s * O + o`.
    emission: Vec<f64>,
    initial_state_dist: Vec<f64>,
    horizon: usize,
    reward_noise: RewardNoise,
}

fn check_rows(name: &str, data: &[f64], width: usize) -> Result<()> {
    for (i, row) in data.chunks(width).enumerate() {
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidModel(format!("{name} row {i} has a negative or non-finite entry")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidModel(format!("{name} row {i} sums to {sum}")));
        }
    }
    Ok(())
}

impl TabularPOMDP {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_states: usize,
        num_actions: usize,
        num_observations: usize,
        transition: Vec<f64>,
        reward_mean: Vec<f64>,
        emission: Vec<f64>,
        initial_state_dist: Vec<f64>,
        horizon: usize,
        reward_noise: RewardNoise,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || num_observations == 0 {
            return Err(Error::InvalidModel("empty state, action or observation space".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        if transition.len() != num_states * num_actions * num_states
            || reward_mean.len() != num_states * num_actions
            || emission.len() != num_states * num_observations
            || initial_state_dist.len() != num_states
        {
            return Err(Error::InvalidModel("tensor shapes do not match the declared sizes".into()));
        }
        check_rows("transition", &transition, num_states)?;
        check_rows("emission", &emission, num_observations)?;
        check_rows("initial_state_dist", &initial_state_dist, num_states)?;
        if reward_mean.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidModel("reward means must lie in [0, 1]".into()));
        }
        Ok(TabularPOMDP {
            num_states,
            num_actions,
            num_observations,
            transition,
            reward_mean,
            emission,
            initial_state_dist,
            horizon,
            reward_noise,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn num_observations(&self) -> usize {
        self.num_observations
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }
    pub fn reward_noise(&self) -> RewardNoise {
        self.reward_noise
    }
    pub fn initial_state_dist(&self) -> &[f64] {
        &self.initial_state_dist
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidModel("horizon must be at least 1".into()));
        }
        Ok(TabularPOMDP {
            horizon,
            ..self.clone()
        })
    }

    pub fn with_reward_noise(&self, reward_noise: RewardNoise) -> Self {
        TabularPOMDP {
            reward_noise,
            ..self.clone()
        }
    }

    #[inline]
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    #[inline]
    pub fn emission_row(&self, s: usize) -> &[f64] {
        &self.emission[s * self.num_observations..(s + 1) * self.num_observations]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward_mean[s * self.num_actions + a]
    }

    /// Stable FNV-1a digest of the model tensors, recorded in dataset metadata.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |x: u64| {
            for b in x.to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        eat(self.num_states as u64);
        eat(self.num_actions as u64);
        eat(self.num_observations as u64);
        eat(self.horizon as u64);
        for v in self
            .transition
            .iter()
            .chain(&self.reward_mean)
            .chain(&self.emission)
            .chain(&self.initial_state_dist)
        {
            eat(v.to_bits());
        }
        format!("{h:016x}")
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(&self.initial_state_dist, rng)
    }

    pub fn sample_next_state<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        sample_index(self.transition_row(s, a), rng)
    }

    pub fn sample_observation<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.emission_row(s), rng)
    }

    pub fn sample_reward<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> f64 {
        let mean = self.reward(s, a);
        match self.reward_noise {
            RewardNoise::Deterministic => mean,
            RewardNoise::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Filtered distribution over latent states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    pub dist: Vec<f64>,
}

impl Belief {
    /// Posterior after the first observation: `b1(s) ∝ mu1(s) E(o1|s)`.
    pub fn initial(model: &TabularPOMDP, o1: usize) -> Result<Belief> {
        let unnorm: Vec<f64> = (0..model.num_states)
            .map(|s| model.initial_state_dist[s] * model.emission_row(s)[o1])
            .collect();
        normalize(unnorm, o1)
    }

    pub fn point_mass(num_states: usize, s: usize) -> Belief {
        let mut dist = vec![0.0; num_states];
        dist[s] = 1.0;
        Belief { dist }
    }

    /// Distribution of the next latent state after taking `a`: `sum_s b(s) T(.|s,a)`.
    pub fn predict(&self, model: &TabularPOMDP, a: usize) -> Vec<f64> {
        let mut next = vec![0.0; model.num_states];
        for (s, &b) in self.dist.iter().enumerate() {
            if b == 0.0 {
                continue;
            }
            for (sn, &t) in model.transition_row(s, a).iter().enumerate() {
                next[sn] += b * t;
            }
        }
        next
    }

    /// `P(o'|b,a)`.
    pub fn observation_dist(&self, model: &TabularPOMDP, a: usize) -> Vec<f64> {
        let predicted = self.predict(model, a);
        let mut out = vec![0.0; model.num_observations];
        for (s, &p) in predicted.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &e) in model.emission_row(s).iter().enumerate() {
                out[o] += p * e;
            }
        }
        out
    }

    /// `sum_s b(s) r(s,a)`.
    pub fn expected_reward(&self, model: &TabularPOMDP, a: usize) -> f64 {
        self.dist
            .iter()
            .enumerate()
            .map(|(s, &b)| b * model.reward(s, a))
            .sum()
    }
}

fn normalize(mut unnorm: Vec<f64>, observation: usize) -> Result<Belief> {
    let z: f64 = unnorm.iter().sum();
    if !(z > 0.0) {
        return Err(Error::ZeroLikelihood { observation });
    }
    unnorm.iter_mut().for_each(|p| *p /= z);
    Ok(Belief { dist: unnorm })
}

/// Bayes filter step: `b'(s') ∝ E(o|s') sum_s T(s'|s,a) b(s)`.
pub fn belief_update(model: &TabularPOMDP, belief: &Belief, a: usize, o: usize) -> Result<Belief> {
    if a >= model.num_actions || o >= model.num_observations {
        return Err(Error::DegenerateInput(format!("action {a} or observation {o} out of range")));
    }
    let predicted = belief.predict(model, a);
    let unnorm = predicted
        .iter()
        .enumerate()
        .map(|(s, &p)| p * model.emission_row(s)[o])
        .collect();
    normalize(unnorm, o)
}
