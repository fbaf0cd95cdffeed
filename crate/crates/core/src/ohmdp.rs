//! The observation-history MDP induced by a [`TabularPOMDP`], and exact oracles
//! over its (bounded) history tree.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::history::{HistKey, History};
use crate::policy::{argmax, DeterministicPolicy, Policy};
use crate::pomdp::{belief_update, Belief, TabularPOMDP};

pub const DEFAULT_SIZE_CAP: usize = 1_000_000;

/// Filtered belief of a history, or `UnreachableHistory`.
pub fn history_belief(model: &TabularPOMDP, tau: &History) -> Result<Belief> {
    let unreachable = |_| Error::UnreachableHistory(tau.to_string());
    let obs = tau.observations();
    if obs.iter().any(|&o| o as usize >= model.num_observations())
        || tau.actions().iter().any(|&a| a as usize >= model.num_actions())
    {
        return Err(Error::UnreachableHistory(tau.to_string()));
    }
    let mut b = Belief::initial(model, obs[0] as usize).map_err(unreachable)?;
    for (i, &a) in tau.actions().iter().enumerate() {
        b = belief_update(model, &b, a as usize, obs[i + 1] as usize).map_err(unreachable)?;
    }
    Ok(b)
}

/// `P(o'|tau,a)`.
pub fn ohmdp_next_dist(model: &TabularPOMDP, tau: &History, a: usize) -> Result<Vec<f64>> {
    Ok(history_belief(model, tau)?.observation_dist(model, a))
}

/// `r(tau,a) = sum_s b_tau(s) r(s,a)`.
pub fn ohmdp_reward(model: &TabularPOMDP, tau: &History, a: usize) -> Result<f64> {
    Ok(history_belief(model, tau)?.expected_reward(model, a))
}

/// `rho_1(o) = sum_s mu1(s) E(o|s)`.
pub fn initial_observation_dist(model: &TabularPOMDP) -> Vec<f64> {
    let mut out = vec![0.0; model.num_observations()];
    for (s, &p) in model.initial_state_dist().iter().enumerate() {
        for (o, &e) in model.emission_row(s).iter().enumerate() {
            out[o] += p * e;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct HistoryNode {
    pub history: History,
    pub key: HistKey,
    pub belief: Belief,
    /// `r(tau,a)` per action.
    pub rewards: Vec<f64>,
    /// `P(o'|tau,a)` per action, dense over observations.
    pub next_obs: Vec<Vec<f64>>,
    /// Child node per `(a, o')` with positive probability; empty at the last enumerated depth.
    pub children: Vec<Vec<(usize, usize)>>,
}

impl HistoryNode {
    pub fn depth(&self) -> usize {
        self.history.depth()
    }
}

/// All reachable histories up to `max_depth`, grouped by depth and sorted by canonical key.
#[derive(Clone, Debug)]
pub struct HistoryTree {
    pub nodes: Vec<HistoryNode>,
    /// `by_depth[h - 1]` lists node ids of depth `h`, in key order.
    pub by_depth: Vec<Vec<usize>>,
    pub index: HashMap<HistKey, usize>,
    /// `(node, rho_1)` for depth-1 histories.
    pub roots: Vec<(usize, f64)>,
    pub num_actions: usize,
    pub num_observations: usize,
    pub horizon: usize,
}

impl HistoryTree {
    pub fn build(model: &TabularPOMDP) -> Result<Self> {
        Self::build_with(model, model.horizon(), DEFAULT_SIZE_CAP)
    }

    pub fn build_with(model: &TabularPOMDP, max_depth: usize, cap: usize) -> Result<Self> {
        if max_depth == 0 || max_depth > model.horizon() {
            return Err(Error::DegenerateInput(format!(
                "max_depth {max_depth} must be in 1..={}",
                model.horizon()
            )));
        }
        let na = model.num_actions();
        let no = model.num_observations();
        let make_node = |history: History, belief: Belief| -> HistoryNode {
            let rewards = (0..na).map(|a| belief.expected_reward(model, a)).collect();
            let next_obs = (0..na).map(|a| belief.observation_dist(model, a)).collect();
            HistoryNode {
                key: history.key(),
                history,
                belief,
                rewards,
                next_obs,
                children: vec![Vec::new(); na],
            }
        };

        let rho1 = initial_observation_dist(model);
        let mut layer: Vec<HistoryNode> = Vec::new();
        for (o, &p) in rho1.iter().enumerate() {
            if p > 0.0 {
                let b = Belief::initial(model, o)?;
                layer.push(make_node(History::initial(o), b));
            }
        }
        let mut nodes: Vec<HistoryNode> = Vec::new();
        let mut by_depth = Vec::new();
        let mut depth = 1;
        loop {
            layer.sort_by(|x, y| x.key.cmp(&y.key));
            if nodes.len() + layer.len() > cap {
                return Err(Error::SizeLimitExceeded { limit: cap });
            }
            let start = nodes.len();
            by_depth.push((start..start + layer.len()).collect::<Vec<_>>());
            nodes.append(&mut layer);
            if depth == max_depth {
                break;
            }
            let mut next = Vec::new();
            for id in start..nodes.len() {
                for a in 0..na {
                    for o in 0..no {
                        if nodes[id].next_obs[a][o] > 0.0 {
                            let b = belief_update(model, &nodes[id].belief, a, o)?;
                            next.push(make_node(nodes[id].history.extended(a, o), b));
                        }
                    }
                }
                if nodes.len() + next.len() > cap {
                    return Err(Error::SizeLimitExceeded { limit: cap });
                }
            }
            layer = next;
            depth += 1;
        }
        let index: HashMap<HistKey, usize> = nodes.iter().enumerate().map(|(i, n)| (n.key.clone(), i)).collect();
        for h in 1..by_depth.len() {
            for &child in &by_depth[h] {
                let hist = &nodes[child].history;
                let parent = index[&hist.prefix(h).key()];
                let a = *hist.actions().last().unwrap() as usize;
                let o = hist.last_observation();
                nodes[parent].children[a].push((o, child));
            }
        }
        for n in &mut nodes {
            for c in &mut n.children {
                c.sort_unstable();
            }
        }
        let roots = by_depth[0].iter().map(|&i| (i, rho1[nodes[i].history.last_observation()])).collect();
        Ok(HistoryTree {
            nodes,
            by_depth,
            index,
            roots,
            num_actions: na,
            num_observations: no,
            horizon: max_depth,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth_count(&self) -> usize {
        self.by_depth.len()
    }

    pub fn node_of(&self, key: &HistKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// `Q(tau,a) = r(tau,a) + sum_o' P(o'|tau,a) next_value(child)`.
    pub fn backup(&self, id: usize, a: usize, values: &[f64]) -> f64 {
        let n = &self.nodes[id];
        n.rewards[a]
            + n.children[a]
                .iter()
                .map(|&(o, c)| n.next_obs[a][o] * values[c])
                .sum::<f64>()
    }

    /// Exact backward induction; returns `(V*, Q*, pi*)` indexed by node id.
    pub fn solve_optimal(&self) -> (Vec<f64>, Vec<Vec<f64>>, Vec<usize>) {
        let mut v = vec![0.0; self.len()];
        let mut q = vec![Vec::new(); self.len()];
        let mut pi = vec![0; self.len()];
        for layer in self.by_depth.iter().rev() {
            for &id in layer {
                let qs: Vec<f64> = (0..self.num_actions).map(|a| self.backup(id, a, &v)).collect();
                let best = argmax(&qs);
                v[id] = qs[best];
                pi[id] = best;
                q[id] = qs;
            }
        }
        (v, q, pi)
    }

    /// Per-node action distributions of `policy`.
    pub fn policy_table(&self, policy: &dyn Policy) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|n| policy.action_probs(&n.history)).collect()
    }

    /// `V^pi` per node.
    pub fn policy_values(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        for layer in self.by_depth.iter().rev() {
            for &id in layer {
                v[id] = (0..self.num_actions)
                    .filter(|&a| probs[id][a] > 0.0)
                    .map(|a| probs[id][a] * self.backup(id, a, &v))
                    .sum();
            }
        }
        v
    }

    /// Probability of reaching each node under the given per-node action distributions.
    pub fn reach_probs(&self, probs: &[Vec<f64>]) -> Vec<f64> {
        let mut reach = vec![0.0; self.len()];
        for &(id, p) in &self.roots {
            reach[id] = p;
        }
        for layer in &self.by_depth {
            for &id in layer {
                let r = reach[id];
                if r == 0.0 {
                    continue;
                }
                let n = &self.nodes[id];
                for a in 0..self.num_actions {
                    let pa = probs[id][a];
                    if pa == 0.0 {
                        continue;
                    }
                    for &(o, c) in &n.children[a] {
                        reach[c] += r * pa * n.next_obs[a][o];
                    }
                }
            }
        }
        reach
    }

    /// `J(pi)` by forward propagation.
    pub fn expected_return(&self, probs: &[Vec<f64>]) -> f64 {
        let reach = self.reach_probs(probs);
        self.nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                reach[id]
                    * (0..self.num_actions)
                        .map(|a| probs[id][a] * n.rewards[a])
                        .sum::<f64>()
            })
            .sum()
    }
}

/// Reachable histories grouped by depth (`result[h - 1]`), each in canonical-key order.
pub fn enumerate_reachable_histories(model: &TabularPOMDP, max_depth: usize, cap: usize) -> Result<Vec<Vec<History>>> {
    let tree = HistoryTree::build_with(model, max_depth, cap)?;
    Ok(tree
        .by_depth
        .iter()
        .map(|layer| layer.iter().map(|&i| tree.nodes[i].history.clone()).collect())
        .collect())
}

#[derive(Clone, Debug)]
pub struct OptimalSolution {
    pub num_actions: usize,
    pub v_star: HashMap<HistKey, f64>,
    pub q_star: HashMap<HistKey, Vec<f64>>,
    pub pi_star: HashMap<HistKey, usize>,
    /// `J(pi*) = E_{rho_1}[V*(tau_1)]`.
    pub optimal_return: f64,
}

impl OptimalSolution {
    pub fn from_tree(tree: &HistoryTree) -> Self {
        let (v, q, pi) = tree.solve_optimal();
        let optimal_return = tree.roots.iter().map(|&(i, p)| p * v[i]).sum();
        let mut v_star = HashMap::with_capacity(tree.len());
        let mut q_star = HashMap::with_capacity(tree.len());
        let mut pi_star = HashMap::with_capacity(tree.len());
        for (i, n) in tree.nodes.iter().enumerate() {
            v_star.insert(n.key.clone(), v[i]);
            q_star.insert(n.key.clone(), q[i].clone());
            pi_star.insert(n.key.clone(), pi[i]);
        }
        OptimalSolution {
            num_actions: tree.num_actions,
            v_star,
            q_star,
            pi_star,
            optimal_return,
        }
    }

    pub fn policy(&self) -> DeterministicPolicy {
        DeterministicPolicy {
            num_actions: self.num_actions,
            actions: self.pi_star.clone(),
        }
    }
}

pub fn optimal_values(model: &TabularPOMDP) -> Result<OptimalSolution> {
    Ok(OptimalSolution::from_tree(&HistoryTree::build(model)?))
}

/// Exact `J(pi)` by forward propagation over the history tree.
pub fn evaluate_policy_exact(model: &TabularPOMDP, policy: &dyn Policy) -> Result<f64> {
    let tree = HistoryTree::build(model)?;
    Ok(tree.expected_return(&tree.policy_table(policy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random::random_pomdp;
    use crate::policy::UniformPolicy;
    use crate::pomdp::RewardNoise;
    use crate::sim::stream_rng;

    fn two_state_noisy() -> TabularPOMDP {
        TabularPOMDP::new(
            2,
            1,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.8, 0.2, 0.2, 0.8],
            vec![0.5, 0.5],
            2,
            RewardNoise::Deterministic,
        )
        .unwrap()
    }

    #[test]
    fn fully_observed_reduces_to_markov() {
        // E = identity; next-obs distribution equals the transition row of the last observation.
        let mut rng = stream_rng(3, 0);
        let base = random_pomdp(3, 2, 3, 3, &mut rng);
        let mut emission = vec![0.0; 9];
        for s in 0..3 {
            emission[s * 3 + s] = 1.0;
        }
        let mut trans = Vec::new();
        for s in 0..3 {
            for a in 0..2 {
                trans.extend_from_slice(base.transition_row(s, a));
            }
        }
        let m = TabularPOMDP::new(3, 2, 3, trans, vec![0.5; 6], emission, vec![0.0, 1.0, 0.0], 3, RewardNoise::Deterministic).unwrap();
        let tree = HistoryTree::build(&m).unwrap();
        for n in &tree.nodes {
            let last = n.history.last_observation();
            for a in 0..2 {
                assert_eq!(n.next_obs[a], m.transition_row(last, a).to_vec());
            }
        }
    }

    #[test]
    fn belief_reward_is_linear() {
        let m = two_state_noisy();
        // After o0 the belief is (0.8, 0.2); reward r(s0)=1, r(s1)=0.
        let r = ohmdp_reward(&m, &History::initial(0), 0).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
        let b = Belief { dist: vec![0.5, 0.5] };
        assert!((b.expected_reward(&m, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unreachable_history_is_an_error() {
        let m = TabularPOMDP::new(1, 1, 2, vec![1.0], vec![0.0], vec![1.0, 0.0], vec![1.0], 2, RewardNoise::Deterministic).unwrap();
        assert!(matches!(
            ohmdp_next_dist(&m, &History::initial(1), 0),
            Err(Error::UnreachableHistory(_))
        ));
    }

    #[test]
    fn counting_full_support() {
        // |O| = 2, |A| = 2, all transitions and emissions positive: 2 * 4 * 4 depth-3 histories.
        let m = random_pomdp(2, 2, 2, 3, &mut stream_rng(11, 0));
        let hs = enumerate_reachable_histories(&m, 3, DEFAULT_SIZE_CAP).unwrap();
        assert_eq!(hs.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 8, 32]);
        // Brute force: every sequence o1 a1 o2 a2 o3 over the alphabets.
        let mut brute = Vec::new();
        for o1 in 0..2 {
            for a1 in 0..2 {
                for o2 in 0..2 {
                    for a2 in 0..2 {
                        for o3 in 0..2 {
                            brute.push(History::from_parts(vec![o1, o2, o3], vec![a1, a2]).unwrap().key());
                        }
                    }
                }
            }
        }
        brute.sort();
        let got: Vec<_> = hs[2].iter().map(History::key).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn deterministic_chain_one_history_per_depth() {
        let m = TabularPOMDP::new(
            3,
            1,
            3,
            vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            vec![0.0; 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            5,
            RewardNoise::Deterministic,
        )
        .unwrap();
        let hs = enumerate_reachable_histories(&m, 5, DEFAULT_SIZE_CAP).unwrap();
        assert!(hs.iter().all(|l| l.len() == 1));
        // Deterministic model gives point-mass next-observation distributions.
        assert_eq!(ohmdp_next_dist(&m, &hs[1][0], 0).unwrap(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn size_cap_enforced() {
        let m = random_pomdp(2, 2, 2, 3, &mut stream_rng(11, 0));
        assert!(matches!(
            enumerate_reachable_histories(&m, 3, 20),
            Err(Error::SizeLimitExceeded { limit: 20 })
        ));
    }

    #[test]
    fn horizon_one_optimum_is_max_reward() {
        let m = random_pomdp(3, 3, 2, 1, &mut stream_rng(4, 0));
        let sol = optimal_values(&m).unwrap();
        for (k, v) in &sol.v_star {
            let h = k.decode().unwrap();
            let best = (0..3).map(|a| ohmdp_reward(&m, &h, a).unwrap()).fold(f64::MIN, f64::max);
            assert!((v - best).abs() < 1e-12);
        }
    }

    #[test]
    fn optimum_matches_exhaustive_deterministic_policies() {
        // 2 states, 2 actions, 2 observations, H = 2: enumerate every map history -> action.
        let m = random_pomdp(2, 2, 2, 2, &mut stream_rng(21, 0));
        let tree = HistoryTree::build(&m).unwrap();
        let sol = OptimalSolution::from_tree(&tree);
        let n = tree.len();
        let mut best = f64::MIN;
        for mask in 0u64..(1 << n) {
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|i| if mask >> i & 1 == 1 { vec![0.0, 1.0] } else { vec![1.0, 0.0] })
                .collect();
            best = best.max(tree.expected_return(&probs));
        }
        assert!((best - sol.optimal_return).abs() < 1e-12);
        let j = evaluate_policy_exact(&m, &sol.policy()).unwrap();
        assert!((j - sol.optimal_return).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_everything_zero() {
        let m = TabularPOMDP::new(2, 2, 2, vec![0.5; 8], vec![0.0; 4], vec![0.5; 4], vec![0.5, 0.5], 3, RewardNoise::Deterministic).unwrap();
        let sol = optimal_values(&m).unwrap();
        assert!(sol.v_star.values().all(|&v| v == 0.0));
        assert_eq!(evaluate_policy_exact(&m, &UniformPolicy { num_actions: 2 }).unwrap(), 0.0);
    }

    #[test]
    fn optimal_dominates_random_policies() {
        let mut rng = stream_rng(8, 0);
        let m = random_pomdp(3, 2, 3, 3, &mut rng);
        let tree = HistoryTree::build(&m).unwrap();
        let (v_star, _, _) = tree.solve_optimal();
        use rand::Rng;
        for k in 0..100 {
            let mut prng = stream_rng(100 + k, 0);
            let probs: Vec<Vec<f64>> = (0..tree.len())
                .map(|_| {
                    let x: f64 = prng.gen();
                    vec![x, 1.0 - x]
                })
                .collect();
            let v = tree.policy_values(&probs);
            for i in 0..tree.len() {
                assert!(v[i] <= v_star[i] + 1e-12);
                assert!(v_star[i] >= 0.0 && v_star[i] <= m.horizon() as f64);
            }
        }
    }
}
