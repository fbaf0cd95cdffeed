//! Pessimistic value iteration with Bernstein bonuses.

use rand::RngCore;
use rayon::prelude::*;

use crate::agents::eval::evaluate_policy_mc;
use crate::data::empirical::EmpiricalModel;
use crate::error::{Error, Result};
use crate::history::{HistKey, History};
use crate::layered::{LayeredModel, LayeredNode};
use crate::ohmdp::{evaluate_policy_exact, OptimalSolution};
use crate::policy::{argmax, one_hot, uniform, Policy};
use crate::pomdp::TabularPOMDP;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BonusParams {
    pub delta: f64,
    pub iota: f64,
    pub horizon: usize,
}

impl BonusParams {
    pub fn new(delta: f64, iota: f64, horizon: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        if !(iota > 0.0) || !iota.is_finite() {
            return Err(Error::Config(format!("iota must be positive, got {iota}")));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(BonusParams { delta, iota, horizon })
    }

    /// `delta = 1 / (2 |H| |A| H N)` with `|H|` the number of reachable (or seen)
    /// histories, and `iota = ln(2 |O| |A| H N / delta)`. `N` is floored at 1.
    pub fn default_for(
        num_observations: usize,
        num_actions: usize,
        horizon: usize,
        num_transitions: usize,
        history_count: usize,
    ) -> Self {
        let n = num_transitions.max(1) as f64;
        let (o, a, h) = (num_observations as f64, num_actions as f64, horizon as f64);
        let delta = 1.0 / (2.0 * history_count.max(1) as f64 * a * h * n);
        let iota = (2.0 * o * a * h * n / delta).ln();
        BonusParams { delta, iota, horizon }
    }

    pub fn with_iota(self, iota: f64) -> Self {
        BonusParams { iota, ..self }
    }
}

/// `V(x, y) = sum x y^2 - (sum x y)^2` over `(x_i, y_i)` pairs.
pub fn variance(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> f64 {
    let second: f64 = pairs.clone().map(|(x, y)| x * y * y).sum();
    let first: f64 = pairs.map(|(x, y)| x * y).sum();
    // Clamp the rounding-level negatives of a degenerate distribution.
    (second - first * first).max(0.0)
}

/// `sqrt(H V iota / n') + sqrt(H r iota / n') + H iota / n'` with `n' = max(n, 1)`.
pub fn bonus_from_stats(n: u64, r_hat: f64, var: f64, params: &BonusParams) -> f64 {
    let h = params.horizon as f64;
    let n1 = n.max(1) as f64;
    (h * var * params.iota / n1).sqrt() + (h * r_hat * params.iota / n1).sqrt() + h * params.iota / n1
}

/// Bonus for `(key, action)` of an empirical history model, with successor values from `v_next`.
pub fn bernstein_bonus(
    emp: &EmpiricalModel,
    v_next: impl Fn(&HistKey) -> f64,
    key: &HistKey,
    action: usize,
    params: &BonusParams,
) -> f64 {
    let Some(st) = emp.get(key, action).filter(|s| s.count > 0) else {
        return bonus_from_stats(0, 0.0, 0.0, params);
    };
    let history = key.decode().expect("empirical keys are valid");
    let pairs: Vec<(f64, f64)> = st
        .p_hat()
        .expect("count > 0")
        .into_iter()
        .map(|(o, p)| {
            let v = if history.depth() < emp.horizon {
                v_next(&history.extended(action, o).key())
            } else {
                0.0
            };
            (p, v)
        })
        .collect();
    bonus_from_stats(st.count, st.r_hat().expect("count > 0"), variance(pairs.iter().copied()), params)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMode {
    /// `H` synchronous sweeps over every key.
    Sweeps,
    /// One pass from the deepest layer up; requires a layered model.
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PessimisticSolution<K: Ord> {
    pub num_actions: usize,
    pub keys: Vec<K>,
    pub index: std::collections::BTreeMap<K, usize>,
    pub q_hat: Vec<Vec<f64>>,
    pub v_hat: Vec<f64>,
    pub policy: Vec<usize>,
    /// Bonus of the final update.
    pub bonuses: Vec<Vec<f64>>,
    /// Keys with at least one transition in the data.
    pub learned: Vec<bool>,
}

impl<K: Ord + Clone> PessimisticSolution<K> {
    pub fn node_of(&self, key: &K) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn value(&self, key: &K) -> Option<f64> {
        self.node_of(key).map(|i| self.v_hat[i])
    }

    pub fn q(&self, key: &K) -> Option<&[f64]> {
        self.node_of(key).map(|i| self.q_hat[i].as_slice())
    }

    /// Greedy action if `key` has data, otherwise `None`.
    pub fn greedy(&self, key: &K) -> Option<usize> {
        self.node_of(key).filter(|&i| self.learned[i]).map(|i| self.policy[i])
    }

    pub fn action_probs(&self, key: Option<&K>) -> Vec<f64> {
        match key.and_then(|k| self.greedy(k)) {
            Some(a) => one_hot(self.num_actions, a),
            None => uniform(self.num_actions),
        }
    }
}

/// One backup of node `x` given successor values.
struct Backup {
    q: Vec<f64>,
    bonus: Vec<f64>,
}

fn backup<K>(node: &LayeredNode<K>, value_of: impl Fn(usize) -> f64, params: &BonusParams) -> Backup {
    let h = params.horizon as f64;
    let mut q = Vec::with_capacity(node.actions.len());
    let mut bonus = Vec::with_capacity(node.actions.len());
    for t in &node.actions {
        let (raw, c) = match t {
            Some(t) => {
                let pairs = t.successors.iter().map(|&(s, p)| (p, value_of(s)));
                let c = bonus_from_stats(t.count, t.r_hat, variance(pairs.clone()), params);
                let next: f64 = pairs.map(|(p, v)| p * v).sum();
                (t.r_hat - c + next, c)
            }
            None => {
                let c = bonus_from_stats(0, 0.0, 0.0, params);
                (-c, c)
            }
        };
        q.push(raw.clamp(0.0, h));
        bonus.push(c);
    }
    Backup { q, bonus }
}

fn merge_monotone(prev: &mut [f64], new: &[f64]) {
    for (p, n) in prev.iter_mut().zip(new) {
        if *n > *p {
            *p = *n;
        }
    }
}

fn finish<K: Ord + Clone>(model: &LayeredModel<K>, q_hat: Vec<Vec<f64>>, bonuses: Vec<Vec<f64>>) -> PessimisticSolution<K> {
    let policy: Vec<usize> = q_hat.iter().map(|q| argmax(q)).collect();
    let v_hat = q_hat.iter().zip(&policy).map(|(q, &a)| q[a]).collect();
    PessimisticSolution {
        num_actions: model.num_actions,
        keys: model.nodes.iter().map(|n| n.key.clone()).collect(),
        index: model.index.clone(),
        q_hat,
        v_hat,
        policy,
        bonuses,
        learned: model.nodes.iter().map(|n| n.visits() > 0).collect(),
    }
}

/// Sweep-mode solve that also returns `V^` after every sweep (index 0 is the all-zero start).
///
/// Each sweep recomputes every `Q^(k, a)` from the previous sweep's `V^` and keeps the
/// entrywise maximum with the previous `Q^`, so `V^` never decreases across sweeps.
pub fn pevi_sweeps_trace<K: Ord + Clone + Sync>(model: &LayeredModel<K>, params: &BonusParams) -> (PessimisticSolution<K>, Vec<Vec<f64>>) {
    let n = model.len();
    let mut q_hat = vec![vec![0.0; model.num_actions]; n];
    let mut v = vec![0.0; n];
    let mut bonuses = vec![vec![0.0; model.num_actions]; n];
    let mut trace = vec![v.clone()];
    for _ in 0..params.horizon {
        let updates: Vec<Backup> = model.nodes.par_iter().map(|node| backup(node, |s| v[s], params)).collect();
        for (i, b) in updates.into_iter().enumerate() {
            merge_monotone(&mut q_hat[i], &b.q);
            bonuses[i] = b.bonus;
        }
        v = q_hat.iter().map(|q| q.iter().copied().fold(0.0, f64::max)).collect();
        trace.push(v.clone());
    }
    (finish(model, q_hat, bonuses), trace)
}

/// Backward pass that reproduces the sweep iterates exactly: each node keeps its
/// per-sweep value sequence until it stops changing, which happens after
/// `H - depth + 1` sweeps on a layered model.
fn pevi_backward<K: Ord + Clone>(model: &LayeredModel<K>, params: &BonusParams) -> Result<PessimisticSolution<K>> {
    if !model.is_layered() {
        return Err(Error::DegenerateInput("backward mode needs successors exactly one step deeper".into()));
    }
    let n = model.len();
    let mut seqs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut q_hat = vec![Vec::new(); n];
    let mut bonuses = vec![Vec::new(); n];
    for id in (0..n).rev() {
        let node = &model.nodes[id];
        let sweeps = node
            .actions
            .iter()
            .flatten()
            .flat_map(|t| t.successors.iter().map(|&(s, _)| seqs[s].len()))
            .max()
            .unwrap_or(1)
            .max(1);
        let mut q = vec![0.0; model.num_actions];
        let mut seq = vec![0.0];
        let mut last_bonus = Vec::new();
        for k in 1..=sweeps {
            let b = backup(node, |s| seqs[s][(k - 1).min(seqs[s].len() - 1)], params);
            merge_monotone(&mut q, &b.q);
            last_bonus = b.bonus;
            seq.push(q.iter().copied().fold(0.0, f64::max));
        }
        seqs[id] = seq;
        q_hat[id] = q;
        bonuses[id] = last_bonus;
    }
    Ok(finish(model, q_hat, bonuses))
}

pub fn pevi_solve<K: Ord + Clone + Sync>(model: &LayeredModel<K>, params: &BonusParams, mode: SolveMode) -> Result<PessimisticSolution<K>> {
    match mode {
        SolveMode::Sweeps => Ok(pevi_sweeps_trace(model, params).0),
        SolveMode::Backward => pevi_backward(model, params),
    }
}

/// Greedy action where `key` is learned, else a uniform draw from `rng`.
pub fn pevi_policy_action<K: Ord + Clone>(solution: &PessimisticSolution<K>, key: Option<&K>, rng: &mut dyn RngCore) -> usize {
    match key.and_then(|k| solution.greedy(k)) {
        Some(a) => a,
        None => (rng.next_u64() % solution.num_actions as u64) as usize,
    }
}

/// A history-keyed solution as a [`Policy`] with the uniform fallback.
pub struct HistoryPeviPolicy<'a>(pub &'a PessimisticSolution<HistKey>);

impl Policy for HistoryPeviPolicy<'_> {
    fn num_actions(&self) -> usize {
        self.0.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        self.0.action_probs(Some(&history.key()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EvalMode {
    Exact,
    MonteCarlo { episodes: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SubOpt {
    Exact(f64),
    MonteCarlo { mean: f64, stderr: f64 },
}

impl SubOpt {
    pub fn value(&self) -> f64 {
        match *self {
            SubOpt::Exact(v) => v,
            SubOpt::MonteCarlo { mean, .. } => mean,
        }
    }
}

/// `J(pi*) - J(pi)`; the Monte-Carlo mode estimates only `J(pi)`.
pub fn suboptimality(model: &TabularPOMDP, policy: &dyn Policy, optimal: &OptimalSolution, mode: EvalMode) -> Result<SubOpt> {
    Ok(match mode {
        EvalMode::Exact => SubOpt::Exact((optimal.optimal_return - evaluate_policy_exact(model, policy)?).max(0.0)),
        EvalMode::MonteCarlo { episodes, seed } => {
            let (mean, stderr) = evaluate_policy_mc(model, policy, episodes, seed);
            SubOpt::MonteCarlo {
                mean: optimal.optimal_return - mean,
                stderr,
            }
        }
    })
}
