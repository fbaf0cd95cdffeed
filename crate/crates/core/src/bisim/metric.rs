//! Exact on-policy bisimulation metrics over the reachable history tree.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::bisim::transport::wasserstein1_discrete;
use crate::error::{Error, Result};
use crate::history::HistKey;
use crate::ohmdp::HistoryTree;
use crate::policy::Policy;
use crate::pomdp::TabularPOMDP;

/// Distances among the histories of one depth.
///
/// Histories with bit-identical policy reward and identical next-class
/// distributions share a class (their distance is exactly zero and their rows
/// coincide), so the matrix is stored per class.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricLayer {
    pub keys: Vec<HistKey>,
    pub index: HashMap<HistKey, usize>,
    pub class_of: Vec<usize>,
    pub num_classes: usize,
    /// Row-major `num_classes x num_classes`.
    pub class_dist: Vec<f64>,
}

impl MetricLayer {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Distance between the `i`-th and `j`-th histories of this layer.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.class_dist[self.class_of[i] * self.num_classes + self.class_of[j]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthIndexedMetric {
    /// `layers[h - 1]` holds depth `h`.
    pub layers: Vec<MetricLayer>,
}

impl DepthIndexedMetric {
    pub fn layer(&self, depth: usize) -> &MetricLayer {
        &self.layers[depth - 1]
    }

    /// `None` when either key is absent or the depths differ.
    pub fn distance(&self, a: &HistKey, b: &HistKey) -> Option<f64> {
        if a.depth() != b.depth() || a.depth() == 0 || a.depth() > self.layers.len() {
            return None;
        }
        let layer = self.layer(a.depth());
        Some(layer.get(*layer.index.get(a)?, *layer.index.get(b)?))
    }

    /// Writes one depth as a labelled square matrix.
    pub fn write_csv<W: Write>(&self, depth: usize, mut out: W) -> Result<()> {
        let layer = self.layer(depth);
        writeln!(out, "# histitch-csv v1")?;
        let header: Vec<String> = layer.keys.iter().map(|k| k.to_string()).collect();
        writeln!(out, "key,{}", header.join(","))?;
        for i in 0..layer.len() {
            let row: Vec<String> = (0..layer.len()).map(|j| format!("{}", layer.get(i, j))).collect();
            writeln!(out, "{},{}", header[i], row.join(","))?;
        }
        Ok(())
    }
}

/// `r^pi` and the next-history distribution `P^pi(.|tau)` of every node.
pub fn policy_averaged(tree: &HistoryTree, probs: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<(usize, f64)>>) {
    let mut rewards = Vec::with_capacity(tree.len());
    let mut nexts = Vec::with_capacity(tree.len());
    for (id, node) in tree.nodes.iter().enumerate() {
        let pi = &probs[id];
        rewards.push((0..tree.num_actions).map(|a| pi[a] * node.rewards[a]).sum());
        let mut next = Vec::new();
        for a in 0..tree.num_actions {
            if pi[a] > 0.0 {
                for &(o, child) in &node.children[a] {
                    next.push((child, pi[a] * node.next_obs[a][o]));
                }
            }
        }
        nexts.push(next);
    }
    (rewards, nexts)
}

/// Metric over the tree for a per-node policy table, computed backward from the deepest layer.
pub fn bisim_metric_on_tree(tree: &HistoryTree, probs: &[Vec<f64>]) -> Result<DepthIndexedMetric> {
    let (rewards, nexts) = policy_averaged(tree, probs);
    let depth_count = tree.depth_count();
    let mut layers: Vec<Option<MetricLayer>> = vec![None; depth_count];
    // Class id of every node, filled layer by layer from the bottom.
    let mut node_class = vec![usize::MAX; tree.len()];
    for h in (0..depth_count).rev() {
        let ids = &tree.by_depth[h];
        // Class signature: reward bits plus the distribution pushed to next-layer classes.
        let mut signatures: HashMap<(u64, Vec<(usize, u64)>), usize> = HashMap::new();
        let mut class_reward = Vec::new();
        let mut class_next: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut class_of = Vec::with_capacity(ids.len());
        for &id in ids {
            let mut pushed: Vec<(usize, f64)> = Vec::new();
            for &(child, p) in &nexts[id] {
                let c = node_class[child];
                match pushed.iter_mut().find(|e| e.0 == c) {
                    Some(e) => e.1 += p,
                    None => pushed.push((c, p)),
                }
            }
            pushed.sort_by_key(|e| e.0);
            let sig = (rewards[id].to_bits(), pushed.iter().map(|&(c, p)| (c, p.to_bits())).collect());
            let next_id = signatures.len();
            let class = *signatures.entry(sig).or_insert(next_id);
            if class == next_id {
                class_reward.push(rewards[id]);
                class_next.push(pushed);
            }
            class_of.push(class);
            node_class[id] = class;
        }
        let nc = class_reward.len();
        let ground = layers.get(h + 1).and_then(|l| l.as_ref());
        let pairs: Vec<(usize, usize)> = (0..nc).flat_map(|i| (i + 1..nc).map(move |j| (i, j))).collect();
        let values: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| -> Result<f64> {
                let mut d = (class_reward[i] - class_reward[j]).abs();
                if let Some(g) = ground {
                    d += class_w1(&class_next[i], &class_next[j], g)?;
                }
                Ok(d)
            })
            .collect::<Result<_>>()?;
        let mut class_dist = vec![0.0; nc * nc];
        for (&(i, j), &d) in pairs.iter().zip(&values) {
            class_dist[i * nc + j] = d;
            class_dist[j * nc + i] = d;
        }
        let keys: Vec<HistKey> = ids.iter().map(|&id| tree.nodes[id].key.clone()).collect();
        let index = keys.iter().enumerate().map(|(i, k)| (k.clone(), i)).collect();
        layers[h] = Some(MetricLayer {
            keys,
            index,
            class_of,
            num_classes: nc,
            class_dist,
        });
    }
    Ok(DepthIndexedMetric {
        layers: layers.into_iter().map(|l| l.expect("every layer filled")).collect(),
    })
}

fn class_w1(p: &[(usize, f64)], q: &[(usize, f64)], ground: &MetricLayer) -> Result<f64> {
    let pm: f64 = p.iter().map(|e| e.1).sum();
    let qm: f64 = q.iter().map(|e| e.1).sum();
    if pm == 0.0 && qm == 0.0 {
        return Ok(0.0);
    }
    let nc = ground.num_classes;
    let cost: Vec<Vec<f64>> = p
        .iter()
        .map(|&(a, _)| q.iter().map(|&(b, _)| ground.class_dist[a * nc + b]).collect())
        .collect();
    let pv: Vec<f64> = p.iter().map(|e| e.1).collect();
    let qv: Vec<f64> = q.iter().map(|e| e.1).collect();
    Ok(wasserstein1_discrete(&pv, &qv, &cost)?.0)
}

/// `d^pi` for a policy over the model's reachable histories.
pub fn exact_bisim_metric(model: &TabularPOMDP, policy: &dyn Policy) -> Result<DepthIndexedMetric> {
    let tree = HistoryTree::build(model)?;
    bisim_metric_on_tree(&tree, &tree.policy_table(policy))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValueDifferenceReport {
    pub pairs_checked: usize,
    pub violations: usize,
    /// `max (|V(tau) - V(tau')| - d(tau, tau'))`; non-positive when the bound holds.
    pub max_excess: f64,
    pub worst_pair: Option<(HistKey, HistKey)>,
}

/// Checks `|V^pi(tau) - V^pi(tau')| <= d^pi(tau, tau')` on every same-depth pair.
pub fn value_difference_check(model: &TabularPOMDP, metric: &DepthIndexedMetric, policy: &dyn Policy) -> Result<ValueDifferenceReport> {
    let tree = HistoryTree::build(model)?;
    let values = tree.policy_values(&tree.policy_table(policy));
    let mut report = ValueDifferenceReport {
        max_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    for (h, ids) in tree.by_depth.iter().enumerate() {
        let layer = metric
            .layers
            .get(h)
            .ok_or_else(|| Error::DegenerateInput("metric has fewer depths than the model".into()))?;
        let pos: Vec<usize> = ids
            .iter()
            .map(|&id| {
                layer
                    .index
                    .get(&tree.nodes[id].key)
                    .copied()
                    .ok_or_else(|| Error::DegenerateInput("metric is missing a reachable history".into()))
            })
            .collect::<Result<_>>()?;
        for i in 0..ids.len() {
            for j in i..ids.len() {
                let gap = (values[ids[i]] - values[ids[j]]).abs();
                let excess = gap - layer.get(pos[i], pos[j]);
                report.pairs_checked += 1;
                if excess > 1e-9 {
                    report.violations += 1;
                }
                if excess > report.max_excess {
                    report.max_excess = excess;
                    report.worst_pair = Some((tree.nodes[ids[i]].key.clone(), tree.nodes[ids[j]].key.clone()));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random::random_pomdp;
    use crate::ohmdp::optimal_values;
    use crate::policy::UniformPolicy;
    use crate::pomdp::RewardNoise;
    use crate::sim::stream_rng;

    #[test]
    fn diagonal_zero_and_symmetric() {
        let m = random_pomdp(3, 2, 3, 3, &mut stream_rng(1, 0));
        let metric = exact_bisim_metric(&m, &UniformPolicy { num_actions: 2 }).unwrap();
        for layer in &metric.layers {
            for i in 0..layer.len() {
                assert_eq!(layer.get(i, i), 0.0);
                for j in 0..layer.len() {
                    assert_eq!(layer.get(i, j), layer.get(j, i));
                }
            }
        }
    }

    #[test]
    fn identical_beliefs_are_at_distance_zero() {
        // Fully observed chain: every depth-2 history ending in the same observation has the same belief.
        let m = TabularPOMDP::new(
            2,
            2,
            2,
            vec![0.3, 0.7, 0.6, 0.4, 0.5, 0.5, 0.1, 0.9],
            vec![0.1, 0.8, 0.4, 0.3],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.5, 0.5],
            3,
            RewardNoise::Deterministic,
        )
        .unwrap();
        let opt = optimal_values(&m).unwrap();
        let metric = exact_bisim_metric(&m, &opt.policy()).unwrap();
        let layer = metric.layer(2);
        for i in 0..layer.len() {
            for j in 0..layer.len() {
                let (a, b) = (layer.keys[i].decode().unwrap(), layer.keys[j].decode().unwrap());
                if a.last_observation() == b.last_observation() {
                    assert_eq!(layer.get(i, j), 0.0);
                }
            }
        }
        // Two last observations means two classes.
        assert_eq!(layer.num_classes, 2);
    }

    #[test]
    fn value_gaps_are_dominated() {
        let mut rng = stream_rng(7, 0);
        for _ in 0..10 {
            let m = random_pomdp(3, 2, 2, 3, &mut rng);
            let opt = optimal_values(&m).unwrap();
            let metric = exact_bisim_metric(&m, &opt.policy()).unwrap();
            let r = value_difference_check(&m, &metric, &opt.policy()).unwrap();
            assert_eq!(r.violations, 0, "{r:?}");
        }
    }

    #[test]
    fn zero_reward_model_is_all_zero() {
        let m = TabularPOMDP::new(2, 2, 2, vec![0.5; 8], vec![0.0; 4], vec![0.7, 0.3, 0.2, 0.8], vec![0.5, 0.5], 3, RewardNoise::Deterministic).unwrap();
        let metric = exact_bisim_metric(&m, &UniformPolicy { num_actions: 2 }).unwrap();
        assert!(metric.layers.iter().all(|l| l.class_dist.iter().all(|&d| d == 0.0)));
        let r = value_difference_check(&m, &metric, &UniformPolicy { num_actions: 2 }).unwrap();
        assert_eq!(r.violations, 0);
        assert_eq!(r.max_excess, 0.0);
    }

    #[test]
    fn csv_has_versioned_header() {
        let m = random_pomdp(2, 2, 2, 2, &mut stream_rng(1, 0));
        let metric = exact_bisim_metric(&m, &UniformPolicy { num_actions: 2 }).unwrap();
        let mut buf = Vec::new();
        metric.write_csv(1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# histitch-csv v1\nkey,0,1\n"));
    }
}
