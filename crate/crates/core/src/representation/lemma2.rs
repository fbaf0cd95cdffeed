//! Exact check of the aggregation bound `|V*(tau) - V*(Phi(tau))| <= H (eps + ||d^_phi - d*||_inf)`.

use crate::bisim::metric::DepthIndexedMetric;
use crate::error::{Error, Result};
use crate::history::HistKey;
use crate::ohmdp::HistoryTree;
use crate::pomdp::TabularPOMDP;
use crate::representation::cluster::Aggregator;
use crate::representation::embedding::{squared_distance, EmbeddingTable, Encoder};

#[derive(Clone, Debug, PartialEq)]
pub struct Lemma2Report {
    pub histories: usize,
    pub clusters: usize,
    /// Largest `d^_phi` between two members of one cluster.
    pub effective_epsilon: f64,
    /// `max |d^_phi - d*|` over same-depth pairs.
    pub metric_gap: f64,
    pub max_lhs: f64,
    pub rhs: f64,
    pub violations: usize,
    pub worst: Option<HistKey>,
}

/// Summarized optimal values on the true model restricted through `Phi`.
///
/// Within a cluster, members are weighted by their reach probability under
/// `pi*` (uniformly when the cluster is never reached). Requires a
/// depth-restricted aggregator so the summarized MDP is layered.
fn summarized_values(tree: &HistoryTree, cluster_of: &[usize], num_clusters: usize, pi_star: &[usize]) -> Vec<f64> {
    let na = tree.num_actions;
    let probs: Vec<Vec<f64>> = pi_star
        .iter()
        .map(|&a| {
            let mut p = vec![0.0; na];
            p[a] = 1.0;
            p
        })
        .collect();
    let reach = tree.reach_probs(&probs);
    let mut mass = vec![0.0; num_clusters];
    let mut members = vec![0usize; num_clusters];
    for (id, &z) in cluster_of.iter().enumerate() {
        mass[z] += reach[id];
        members[z] += 1;
    }
    let weight = |id: usize| {
        let z = cluster_of[id];
        if mass[z] > 0.0 {
            reach[id] / mass[z]
        } else {
            1.0 / members[z] as f64
        }
    };
    let mut reward = vec![vec![0.0; na]; num_clusters];
    let mut next: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); na]; num_clusters];
    let mut depth = vec![0usize; num_clusters];
    for (id, node) in tree.nodes.iter().enumerate() {
        let z = cluster_of[id];
        let w = weight(id);
        depth[z] = node.depth();
        for a in 0..na {
            reward[z][a] += w * node.rewards[a];
            for &(o, child) in &node.children[a] {
                next[z][a].push((cluster_of[child], w * node.next_obs[a][o]));
            }
        }
    }
    let mut order: Vec<usize> = (0..num_clusters).collect();
    order.sort_by_key(|&z| std::cmp::Reverse(depth[z]));
    let mut v = vec![0.0; num_clusters];
    for z in order {
        v[z] = (0..na)
            .map(|a| reward[z][a] + next[z][a].iter().map(|&(c, p)| p * v[c]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
    }
    v
}

/// `metric` should be the exact metric under `pi*`; `phi` must embed every reachable history.
pub fn lemma2_check(model: &TabularPOMDP, aggregator: &Aggregator, phi: &EmbeddingTable, metric: &DepthIndexedMetric) -> Result<Lemma2Report> {
    if !aggregator.depth_restricted {
        return Err(Error::Config("the aggregation check needs depth-restricted clusters".into()));
    }
    let tree = HistoryTree::build(model)?;
    let (v_star, _, pi_star) = tree.solve_optimal();
    let encoder = Encoder::Table(phi.clone());
    let cluster_of: Vec<usize> = tree
        .nodes
        .iter()
        .map(|n| {
            aggregator
                .assign(&n.history, &encoder)
                .ok_or_else(|| Error::UnassignedHistory(n.key.to_string()))
        })
        .collect::<Result<_>>()?;
    // Reachable histories at one depth may still land in a center of another depth
    // if their own depth has no center; treat that as unassigned.
    for (id, &z) in cluster_of.iter().enumerate() {
        if aggregator.center_depths[z] != tree.nodes[id].depth() {
            return Err(Error::UnassignedHistory(tree.nodes[id].key.to_string()));
        }
    }
    let nz = aggregator.num_clusters();
    let v_z = summarized_values(&tree, &cluster_of, nz, &pi_star);

    let mut effective_epsilon: f64 = 0.0;
    let mut metric_gap: f64 = 0.0;
    for ids in &tree.by_depth {
        for (x, &i) in ids.iter().enumerate() {
            let ki = &tree.nodes[i].key;
            let ei = phi.get(ki)?;
            for &j in &ids[x..] {
                let kj = &tree.nodes[j].key;
                let d_hat = squared_distance(ei, phi.get(kj)?);
                let d_star = metric
                    .distance(ki, kj)
                    .ok_or_else(|| Error::DegenerateInput(format!("metric lacks {ki}")))?;
                metric_gap = metric_gap.max((d_hat - d_star).abs());
                if cluster_of[i] == cluster_of[j] {
                    effective_epsilon = effective_epsilon.max(d_hat);
                }
            }
        }
    }
    let rhs = model.horizon() as f64 * (effective_epsilon + metric_gap);
    let mut report = Lemma2Report {
        histories: tree.len(),
        clusters: nz,
        effective_epsilon,
        metric_gap,
        max_lhs: 0.0,
        rhs,
        violations: 0,
        worst: None,
    };
    for (id, node) in tree.nodes.iter().enumerate() {
        let lhs = (v_star[id] - v_z[cluster_of[id]]).abs();
        if lhs > rhs + 1e-6 {
            report.violations += 1;
        }
        if lhs > report.max_lhs {
            report.max_lhs = lhs;
            report.worst = Some(node.key.clone());
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bisim::metric::exact_bisim_metric;
    use crate::envs::random::random_pomdp;
    use crate::ohmdp::optimal_values;
    use crate::representation::cluster::cluster;
    use crate::representation::mds::plant_metric;
    use crate::sim::stream_rng;
    use rand::Rng;

    #[test]
    fn planted_singletons_are_exact() {
        let m = random_pomdp(3, 2, 2, 3, &mut stream_rng(2, 0));
        let opt = optimal_values(&m).unwrap();
        let metric = exact_bisim_metric(&m, &opt.policy()).unwrap();
        // One coordinate per history keeps clusters singleton; the gap is reported, not zero.
        let tree = HistoryTree::build(&m).unwrap();
        let mut phi = EmbeddingTable::new(1);
        for (i, n) in tree.nodes.iter().enumerate() {
            phi.insert(n.key.clone(), vec![i as f64 * 10.0]).unwrap();
        }
        let agg = cluster(&phi, 0.0, true);
        let r = lemma2_check(&m, &agg, &phi, &metric).unwrap();
        assert_eq!(r.clusters, r.histories);
        assert!(r.max_lhs < 1e-12);
        assert_eq!(r.violations, 0);
    }

    #[test]
    fn planted_metric_gives_zero_gap_on_embeddable_instance() {
        // Fully observed bandit-like chain where d* per depth lies on a line.
        let m = crate::pomdp::TabularPOMDP::new(
            2,
            1,
            2,
            vec![0.5, 0.5, 0.5, 0.5],
            vec![0.2, 0.9],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.5, 0.5],
            2,
            crate::pomdp::RewardNoise::Deterministic,
        )
        .unwrap();
        let opt = optimal_values(&m).unwrap();
        let metric = exact_bisim_metric(&m, &opt.policy()).unwrap();
        let phi = plant_metric(&metric, 2, true);
        let agg = cluster(&phi, 0.0, true);
        let r = lemma2_check(&m, &agg, &phi, &metric).unwrap();
        assert!(r.metric_gap < 1e-9, "{r:?}");
        assert!(r.max_lhs < 1e-12);
    }

    #[test]
    fn everything_merged_still_satisfies_the_bound() {
        let mut rng = stream_rng(8, 0);
        for _ in 0..10 {
            let m = random_pomdp(3, 2, 2, 2, &mut rng);
            let opt = optimal_values(&m).unwrap();
            let metric = exact_bisim_metric(&m, &opt.policy()).unwrap();
            let tree = HistoryTree::build(&m).unwrap();
            let mut phi = EmbeddingTable::new(2);
            for n in &tree.nodes {
                phi.insert(n.key.clone(), vec![rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.1)]).unwrap();
            }
            let agg = cluster(&phi, 1e6, true);
            assert_eq!(agg.num_clusters(), 2);
            let r = lemma2_check(&m, &agg, &phi, &metric).unwrap();
            assert_eq!(r.violations, 0, "{r:?}");
        }
    }
}
