//! Small synthetic instances: random POMDPs, the three-step stitching POMDP,
//! and a family with observation noise that is irrelevant to control.

use rand::Rng;

use crate::history::History;
use crate::pomdp::{RewardNoise, TabularPOMDP};

/// Flat Dirichlet draw; every entry is strictly positive.
fn simplex<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3).collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    // Renormalize the rounding error away so rows pass the 1e-12 check.
    let fix = 1.0 - v.iter().sum::<f64>();
    v[0] += fix;
    v
}

/// Random full-support POMDP with uniform rewards in `[0, 1]`.
pub fn random_pomdp<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    num_observations: usize,
    horizon: usize,
    rng: &mut R,
) -> TabularPOMDP {
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        transition.extend(simplex(num_states, rng));
    }
    let reward = (0..num_states * num_actions).map(|_| rng.gen::<f64>()).collect();
    let mut emission = Vec::with_capacity(num_states * num_observations);
    for _ in 0..num_states {
        emission.extend(simplex(num_observations, rng));
    }
    let initial = simplex(num_states, rng);
    TabularPOMDP::new(
        num_states,
        num_actions,
        num_observations,
        transition,
        reward,
        emission,
        initial,
        horizon,
        RewardNoise::Deterministic,
    )
    .expect("random rows are normalized")
}

/// Like [`random_pomdp`] but with random sizes inside the given bounds (each at least 1,
/// horizon and actions at least 2 when the bound allows).
pub fn random_small_pomdp<R: Rng + ?Sized>(
    max_states: usize,
    max_observations: usize,
    max_actions: usize,
    max_horizon: usize,
    rng: &mut R,
) -> TabularPOMDP {
    let s = rng.gen_range(1..=max_states);
    let o = rng.gen_range(1..=max_observations);
    let a = rng.gen_range(max_actions.min(2)..=max_actions);
    let h = rng.gen_range(max_horizon.min(2)..=max_horizon);
    random_pomdp(s, a, o, h, rng)
}

pub mod stitching {
    //! Two start states lead through a shared middle state. The behavior policy
    //! only takes the rewarding action at the middle state when it started in `b`,
    //! so the history `a.0.m` never sees the good action even though `b.0.m`
    //! reaches the same latent state.

    use super::*;

    pub const OBS_A: usize = 0;
    pub const OBS_B: usize = 1;
    pub const OBS_MID: usize = 2;
    pub const OBS_END: usize = 3;

    pub fn model() -> TabularPOMDP {
        // States: 0 start-a, 1 start-b, 2 middle, 3 end. Observations reveal the state.
        let (s, a) = (4, 2);
        let mut t = vec![0.0; s * a * s];
        let mut set = |from: usize, act: usize, to: usize| t[(from * a + act) * s + to] = 1.0;
        for start in 0..2 {
            set(start, 0, 2);
            set(start, 1, 3);
        }
        for act in 0..2 {
            set(2, act, 3);
            set(3, act, 3);
        }
        let mut r = vec![0.0; s * a];
        r[2 * a + 1] = 1.0;
        let mut e = vec![0.0; s * s];
        for i in 0..s {
            e[i * s + i] = 1.0;
        }
        TabularPOMDP::new(s, a, s, t, r, e, vec![0.5, 0.5, 0.0, 0.0], 3, RewardNoise::Deterministic)
            .expect("stitching model is valid")
    }

    /// Behavior: always action 0, except action 1 at the middle state after starting in `b`.
    pub fn behavior_action(history: &History) -> usize {
        let o = history.observations();
        if history.depth() == 2 && o[0] as usize == OBS_B && o[1] as usize == OBS_MID {
            1
        } else {
            0
        }
    }

    /// The history whose good continuation only appears in the other trajectory.
    pub fn stitched_history() -> History {
        History::initial(OBS_A).extended(0, OBS_MID)
    }
}

pub mod nuisance {
    //! Random latent dynamics observed through `(state, coin)` pairs where the coin
    //! is fresh uniform noise. Histories that agree on the last latent state are
    //! bisimilar, so the reachable history set collapses to `H * |S|` classes.

    use super::*;

    pub fn observation(state: usize, coin: usize) -> usize {
        2 * state + coin
    }

    pub fn state_of(observation: usize) -> usize {
        observation / 2
    }

    pub fn model<R: Rng + ?Sized>(num_states: usize, num_actions: usize, horizon: usize, rng: &mut R) -> TabularPOMDP {
        let base = random_pomdp(num_states, num_actions, 1, horizon, rng);
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        let mut reward = Vec::with_capacity(num_states * num_actions);
        for s in 0..num_states {
            for a in 0..num_actions {
                transition.extend_from_slice(base.transition_row(s, a));
                // Sparse-ish rewards sharpen the gap between good and bad actions.
                let r = base.reward(s, a);
                reward.push(if r > 0.5 { r } else { 0.0 });
            }
        }
        let num_obs = 2 * num_states;
        let mut emission = vec![0.0; num_states * num_obs];
        for s in 0..num_states {
            emission[s * num_obs + observation(s, 0)] = 0.5;
            emission[s * num_obs + observation(s, 1)] = 0.5;
        }
        TabularPOMDP::new(
            num_states,
            num_actions,
            num_obs,
            transition,
            reward,
            emission,
            base.initial_state_dist().to_vec(),
            horizon,
            RewardNoise::Deterministic,
        )
        .expect("nuisance model is valid")
    }
}
