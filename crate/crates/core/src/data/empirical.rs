use std::collections::BTreeMap;

use crate::data::dataset::Dataset;
use crate::history::{HistKey, History};
use crate::policy::{uniform, Policy};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActionStats {
    pub count: u64,
    pub reward_sum: f64,
    /// Next-observation counts.
    pub next: BTreeMap<usize, u64>,
}

impl ActionStats {
    pub fn r_hat(&self) -> Option<f64> {
        (self.count > 0).then(|| self.reward_sum / self.count as f64)
    }

    /// `(o', P^(o'|.))` over observed successors.
    pub fn p_hat(&self) -> Option<Vec<(usize, f64)>> {
        (self.count > 0).then(|| {
            self.next
                .iter()
                .map(|(&o, &c)| (o, c as f64 / self.count as f64))
                .collect()
        })
    }
}

/// Maximum-likelihood counts per `(history, action)`. Histories never seen in the
/// data have no entry; actions never taken at a seen history have `count == 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalModel {
    pub num_actions: usize,
    pub num_observations: usize,
    pub horizon: usize,
    pub num_transitions: usize,
    pub table: BTreeMap<HistKey, Vec<ActionStats>>,
}

impl EmpiricalModel {
    pub fn new(num_actions: usize, num_observations: usize, horizon: usize) -> Self {
        EmpiricalModel {
            num_actions,
            num_observations,
            horizon,
            num_transitions: 0,
            table: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, history: &History, action: usize, reward: f64, next_observation: usize) {
        let na = self.num_actions;
        let row = self.table.entry(history.key()).or_insert_with(|| vec![ActionStats::default(); na]);
        let st = &mut row[action];
        st.count += 1;
        st.reward_sum += reward;
        *st.next.entry(next_observation).or_insert(0) += 1;
        self.num_transitions += 1;
    }

    pub fn get(&self, key: &HistKey, action: usize) -> Option<&ActionStats> {
        self.table.get(key).map(|row| &row[action])
    }

    pub fn count(&self, key: &HistKey, action: usize) -> u64 {
        self.get(key, action).map_or(0, |s| s.count)
    }

    pub fn visits(&self, key: &HistKey) -> u64 {
        self.table.get(key).map_or(0, |row| row.iter().map(|s| s.count).sum())
    }

    pub fn r_hat(&self, key: &HistKey, action: usize) -> Option<f64> {
        self.get(key, action).and_then(ActionStats::r_hat)
    }

    pub fn p_hat(&self, key: &HistKey, action: usize) -> Option<Vec<(usize, f64)>> {
        self.get(key, action).and_then(ActionStats::p_hat)
    }

    /// Number of distinct histories with at least one transition.
    pub fn num_histories(&self) -> usize {
        self.table.len()
    }
}

pub fn estimate_empirical(dataset: &Dataset) -> EmpiricalModel {
    let mut m = EmpiricalModel::new(dataset.meta.num_actions, dataset.meta.num_observations, dataset.meta.horizon);
    for (h, step) in dataset.transitions() {
        m.add(&h, step.action, step.reward, step.next_observation);
    }
    m
}

/// Frequency estimates of the data distribution `mu` and the behavior policy.
#[derive(Clone, Debug, PartialEq)]
pub struct BehaviorEstimate {
    pub num_actions: usize,
    pub total: u64,
    pub counts: BTreeMap<HistKey, Vec<u64>>,
}

impl BehaviorEstimate {
    /// `mu^(tau, a) = n(tau, a) / N`.
    pub fn mu_hat(&self, key: &HistKey, action: usize) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(key).map_or(0.0, |c| c[action] as f64 / self.total as f64)
    }

    /// `pi_beta^(.|tau)`, or `None` when `tau` was never seen.
    pub fn pi_beta_hat(&self, key: &HistKey) -> Option<Vec<f64>> {
        let c = self.counts.get(key)?;
        let n: u64 = c.iter().sum();
        Some(c.iter().map(|&x| x as f64 / n as f64).collect())
    }
}

/// Uses the uniform distribution at histories absent from the data.
impl Policy for BehaviorEstimate {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        self.pi_beta_hat(&history.key()).unwrap_or_else(|| uniform(self.num_actions))
    }
}

pub fn estimate_behavior(dataset: &Dataset) -> BehaviorEstimate {
    let na = dataset.meta.num_actions;
    let mut counts: BTreeMap<HistKey, Vec<u64>> = BTreeMap::new();
    let mut total = 0;
    for (h, step) in dataset.transitions() {
        counts.entry(h.key()).or_insert_with(|| vec![0; na])[step.action] += 1;
        total += 1;
    }
    BehaviorEstimate {
        num_actions: na,
        total,
        counts,
    }
}
