//! Tabular conservative Q-learning.
//!
//! Per sampled transition `(k, a, r, k')`:
//!
//! ```text
//! Q(k, a) += lr * (r + gamma * max_{b} Q(k', b) - Q(k, a))
//! Q(k, .) -= lr * alpha * (softmax(Q(k, .)) - mu^(. | k))
//! ```
//!
//! The max runs over actions seen at `k'` ([`Bootstrap::Seen`]) or all actions.
//! The second line is the gradient of `logsumexp Q(k, .) - E_mu^ Q(k, a)`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::history::{HistKey, History};
use crate::policy::{argmax, one_hot, uniform, Policy};
use crate::sim::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bootstrap {
    All,
    Seen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqlConfig {
    pub alpha: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub updates_per_iter: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub bootstrap: Bootstrap,
}

impl Default for CqlConfig {
    fn default() -> Self {
        CqlConfig {
            alpha: 0.1,
            discount: 0.99,
            batch_size: 32,
            updates_per_iter: 200,
            iterations: 100,
            learning_rate: 0.1,
            bootstrap: Bootstrap::Seen,
        }
    }
}

impl CqlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("cql alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::Config(format!("discount must be in (0, 1], got {}", self.discount)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyedTransition {
    pub key: usize,
    pub action: usize,
    pub reward: f64,
    /// `None` past the horizon.
    pub next: Option<usize>,
}

/// Transitions over integer keys plus the per-key behavior statistics CQL needs.
#[derive(Clone, Debug, PartialEq)]
pub struct CqlData {
    pub num_keys: usize,
    pub num_actions: usize,
    pub transitions: Vec<KeyedTransition>,
    pub freq: Vec<Vec<f64>>,
    pub seen: Vec<Vec<bool>>,
}

impl CqlData {
    pub fn new(num_keys: usize, num_actions: usize, transitions: Vec<KeyedTransition>) -> Self {
        let mut counts = vec![vec![0u64; num_actions]; num_keys];
        for t in &transitions {
            counts[t.key][t.action] += 1;
        }
        let freq = counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                row.iter().map(|&c| if total > 0 { c as f64 / total as f64 } else { 0.0 }).collect()
            })
            .collect();
        let seen = counts.iter().map(|row| row.iter().map(|&c| c > 0).collect()).collect();
        CqlData {
            num_keys,
            num_actions,
            transitions,
            freq,
            seen,
        }
    }

    pub fn is_visited(&self, key: usize) -> bool {
        self.seen[key].iter().any(|&s| s)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CqlIterStats {
    pub iteration: usize,
    pub td_loss: f64,
    pub conservative_term: f64,
}

fn softmax(q: &[f64]) -> Vec<f64> {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn logsumexp(q: &[f64]) -> f64 {
    let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + q.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Runs `updates` minibatch steps on `q` in place.
pub fn cql_updates(q: &mut [Vec<f64>], data: &CqlData, config: &CqlConfig, updates: usize, rng: &mut impl Rng) -> CqlIterStats {
    let mut stats = CqlIterStats::default();
    if data.transitions.is_empty() {
        return stats;
    }
    let lr = config.learning_rate;
    let mut samples = 0usize;
    for _ in 0..updates {
        for _ in 0..config.batch_size {
            let t = data.transitions[rng.gen_range(0..data.transitions.len())];
            let boot = match t.next {
                Some(k2) => {
                    let row = &q[k2];
                    let best = (0..data.num_actions)
                        .filter(|&b| config.bootstrap == Bootstrap::All || data.seen[k2][b])
                        .map(|b| row[b])
                        .fold(f64::NEG_INFINITY, f64::max);
                    if best.is_finite() {
                        best
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            };
            let row = &mut q[t.key];
            let td = t.reward + config.discount * boot - row[t.action];
            stats.td_loss += td * td;
            stats.conservative_term += logsumexp(row) - row[t.action];
            row[t.action] += lr * td;
            if config.alpha > 0.0 {
                let sm = softmax(row);
                for (b, x) in row.iter_mut().enumerate() {
                    *x -= lr * config.alpha * (sm[b] - data.freq[t.key][b]);
                }
            }
            samples += 1;
        }
    }
    stats.td_loss /= samples as f64;
    stats.conservative_term /= samples as f64;
    stats
}

/// Greedy action per key; `None` for keys without data.
pub fn greedy_actions(q: &[Vec<f64>], data: &CqlData) -> Vec<Option<usize>> {
    (0..data.num_keys).map(|k| data.is_visited(k).then(|| argmax(&q[k]))).collect()
}

/// A history-keyed action table with the uniform fallback on unseen keys.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedPolicy {
    pub num_actions: usize,
    pub table: HashMap<HistKey, Vec<f64>>,
}

impl Policy for LearnedPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        self.table.get(&history.key()).cloned().unwrap_or_else(|| uniform(self.num_actions))
    }
}

/// Unique history keys of a dataset in `(depth, key)` order with the keyed transitions.
pub fn index_dataset(dataset: &Dataset) -> (Vec<HistKey>, Vec<KeyedTransition>) {
    let mut ids: HashMap<HistKey, usize> = HashMap::new();
    let mut keys = Vec::new();
    let mut raw = Vec::with_capacity(dataset.num_transitions());
    let horizon = dataset.meta.horizon;
    for (history, step) in dataset.transitions() {
        let mut intern = |k: HistKey| {
            *ids.entry(k.clone()).or_insert_with(|| {
                keys.push(k);
                keys.len() - 1
            })
        };
        let key = intern(history.key());
        let next = (history.depth() < horizon).then(|| intern(history.extended(step.action, step.next_observation).key()));
        raw.push(KeyedTransition {
            key,
            action: step.action,
            reward: step.reward,
            next,
        });
    }
    // Renumber in canonical order so results do not depend on dataset order.
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&i, &j| (keys[i].depth(), &keys[i]).cmp(&(keys[j].depth(), &keys[j])));
    let mut new_id = vec![0; keys.len()];
    for (pos, &old) in order.iter().enumerate() {
        new_id[old] = pos;
    }
    let sorted = order.iter().map(|&i| keys[i].clone()).collect();
    let transitions = raw
        .into_iter()
        .map(|t| KeyedTransition {
            key: new_id[t.key],
            next: t.next.map(|n| new_id[n]),
            ..t
        })
        .collect();
    (sorted, transitions)
}

/// CQL on raw histories. Returns the policy and per-iteration statistics.
pub fn tabular_cql(dataset: &Dataset, config: &CqlConfig, seed: u64) -> Result<(LearnedPolicy, Vec<CqlIterStats>)> {
    config.validate()?;
    let na = dataset.meta.num_actions;
    let (keys, transitions) = index_dataset(dataset);
    let data = CqlData::new(keys.len(), na, transitions);
    let mut q = vec![vec![0.0; na]; keys.len()];
    let mut rng = stream_rng(seed, 0);
    let stats = (0..config.iterations)
        .map(|it| CqlIterStats {
            iteration: it,
            ..cql_updates(&mut q, &data, config, config.updates_per_iter, &mut rng)
        })
        .collect();
    let table = greedy_actions(&q, &data)
        .into_iter()
        .enumerate()
        .filter_map(|(k, a)| a.map(|a| (keys[k].clone(), one_hot(na, a))))
        .collect();
    Ok((LearnedPolicy { num_actions: na, table }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ohmdp::optimal_values;
    use crate::pomdp::{RewardNoise, TabularPOMDP};
    use crate::sim::{Step, Trajectory};

    fn run(data: &CqlData, config: &CqlConfig, updates: usize) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; data.num_actions]; data.num_keys];
        cql_updates(&mut q, data, config, updates, &mut stream_rng(1, 0));
        q
    }

    #[test]
    fn recovers_q_star_without_penalty() {
        // Two steps, fully observed, deterministic rewards and full coverage.
        let m = TabularPOMDP::new(
            2,
            2,
            2,
            vec![0.7, 0.3, 0.2, 0.8, 0.4, 0.6, 0.9, 0.1],
            vec![0.1, 0.5, 0.6, 0.2],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.5, 0.5],
            2,
            RewardNoise::Deterministic,
        )
        .unwrap();
        let opt = optimal_values(&m).unwrap();
        // Exact model as a weighted transition list: histories o1 and o1.a.o2.
        let mut keys: Vec<HistKey> = Vec::new();
        let id = |k: HistKey, keys: &mut Vec<HistKey>| keys.iter().position(|x| *x == k).unwrap_or_else(|| {
            keys.push(k);
            keys.len() - 1
        });
        let mut transitions = Vec::new();
        for o1 in 0..2 {
            let h1 = History::initial(o1);
            let k1 = id(h1.key(), &mut keys);
            for a in 0..2 {
                for o2 in 0..2 {
                    let p = m.transition_row(o1, a)[o2];
                    let h2 = h1.extended(a, o2);
                    let k2 = id(h2.key(), &mut keys);
                    for _ in 0..(p * 10.0).round() as usize {
                        transitions.push(KeyedTransition { key: k1, action: a, reward: m.reward(o1, a), next: Some(k2) });
                    }
                    for b in 0..2 {
                        transitions.push(KeyedTransition { key: k2, action: b, reward: m.reward(o2, b), next: None });
                    }
                }
            }
        }
        let data = CqlData::new(keys.len(), 2, transitions);
        // Constant-step TD keeps sampling noise of order sqrt(lr); shrink the step to converge.
        let mut q = vec![vec![0.0; 2]; keys.len()];
        let mut rng = stream_rng(1, 0);
        for (lr, updates) in [(0.01, 3_000), (1e-3, 30_000), (1e-4, 300_000)] {
            let config = CqlConfig {
                alpha: 0.0,
                discount: 1.0,
                learning_rate: lr,
                ..Default::default()
            };
            cql_updates(&mut q, &data, &config, updates, &mut rng);
        }
        for (k, key) in keys.iter().enumerate() {
            for a in 0..2 {
                assert!((q[k][a] - opt.q_star[key][a]).abs() < 1e-3, "{key:?} {a}: {} vs {}", q[k][a], opt.q_star[key][a]);
            }
        }
    }

    #[test]
    fn large_penalty_follows_behavior_majority() {
        // One-step bandit; the behavior prefers action 2 but action 0 pays more.
        let mut transitions = Vec::new();
        for (a, n, r) in [(0, 2, 1.0), (1, 3, 0.5), (2, 5, 0.0)] {
            for _ in 0..n {
                transitions.push(KeyedTransition { key: 0, action: a, reward: r, next: None });
            }
        }
        let data = CqlData::new(1, 4, transitions);
        let config = CqlConfig {
            alpha: 1e3,
            learning_rate: 1e-4,
            ..Default::default()
        };
        let q = run(&data, &config, 2_000);
        assert_eq!(greedy_actions(&q, &data), vec![Some(2)]);
        let weak = run(&data, &CqlConfig { alpha: 0.0, learning_rate: 0.05, ..Default::default() }, 2_000);
        assert_eq!(greedy_actions(&weak, &data), vec![Some(0)]);
    }

    #[test]
    fn penalty_lowers_unseen_actions() {
        let transitions = vec![KeyedTransition { key: 0, action: 0, reward: 0.5, next: None }];
        let data = CqlData::new(1, 3, transitions);
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.5, 2.0, 8.0] {
            let q = run(&data, &CqlConfig { alpha, ..Default::default() }, 300);
            assert!(q[0][1] <= last);
            last = q[0][1];
        }
        assert!(last < 0.0);
    }

    #[test]
    fn unseen_history_falls_back_to_uniform() {
        let m = crate::envs::random::random_pomdp(2, 3, 2, 2, &mut stream_rng(4, 0));
        let t = Trajectory {
            initial_observation: 0,
            steps: vec![
                Step { action: 1, reward: 1.0, next_observation: 0 },
                Step { action: 1, reward: 1.0, next_observation: 0 },
            ],
            terminal: true,
        };
        let d = Dataset::from_trajectories(&m, 0, "test", vec![t]);
        let (pi, stats) = tabular_cql(&d, &CqlConfig { iterations: 3, ..Default::default() }, 0).unwrap();
        assert_eq!(stats.len(), 3);
        assert_eq!(pi.action_probs(&History::initial(1)), uniform(3));
        assert_eq!(pi.action_probs(&History::initial(0)), one_hot(3, 1));
        assert!(tabular_cql(&d, &CqlConfig { discount: 0.0, ..Default::default() }, 0).is_err());
    }
}
