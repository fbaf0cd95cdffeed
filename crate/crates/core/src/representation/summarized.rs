//! Cluster-level models: the one-step models used by the bisimulation loss and the
//! summarized MDP handed to the offline solvers.

use std::collections::BTreeMap;

use crate::data::empirical::EmpiricalModel;
use crate::error::{Error, Result};
use crate::layered::{LayeredModel, LayeredNode, Transition};
use crate::representation::cluster::Aggregator;
use crate::representation::embedding::Encoder;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelEntry {
    pub count: u64,
    pub r_hat: f64,
    /// Next-observation distribution, sorted by observation.
    pub p_hat: Vec<(usize, f64)>,
}

/// `r^(z, a)` and `P^(o' | z, a)` per cluster, fit from aggregated counts.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedModels {
    pub num_actions: usize,
    /// `entries[z][a]`, `None` where `n(z, a) = 0`.
    pub entries: Vec<Vec<Option<ModelEntry>>>,
}

impl LearnedModels {
    pub fn get(&self, cluster: usize, action: usize) -> Result<&ModelEntry> {
        self.entries
            .get(cluster)
            .and_then(|row| row.get(action))
            .and_then(|e| e.as_ref())
            .ok_or(Error::MissingModelEntry { cluster, action })
    }

    /// Count-weighted behavior frequencies per cluster, `None` where unvisited.
    pub fn action_frequencies(&self, cluster: usize) -> Option<Vec<f64>> {
        let counts: Vec<u64> = self.entries[cluster].iter().map(|e| e.as_ref().map_or(0, |e| e.count)).collect();
        let total: u64 = counts.iter().sum();
        (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
    }
}

fn cluster_of(agg: &Aggregator, key: &crate::history::HistKey) -> Result<usize> {
    agg.assignment
        .get(key)
        .copied()
        .ok_or_else(|| Error::UnassignedHistory(key.to_string()))
}

pub fn fit_learned_models(agg: &Aggregator, emp: &EmpiricalModel) -> Result<LearnedModels> {
    let na = emp.num_actions;
    let mut acc: Vec<Vec<(u64, f64, BTreeMap<usize, u64>)>> = vec![vec![(0, 0.0, BTreeMap::new()); na]; agg.num_clusters()];
    for (key, row) in &emp.table {
        let z = cluster_of(agg, key)?;
        for (a, st) in row.iter().enumerate() {
            let slot = &mut acc[z][a];
            slot.0 += st.count;
            slot.1 += st.reward_sum;
            for (&o, &c) in &st.next {
                *slot.2.entry(o).or_insert(0) += c;
            }
        }
    }
    let entries = acc
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(n, rs, next)| {
                    (n > 0).then(|| ModelEntry {
                        count: n,
                        r_hat: rs / n as f64,
                        p_hat: next.into_iter().map(|(o, c)| (o, c as f64 / n as f64)).collect(),
                    })
                })
                .collect()
        })
        .collect();
    Ok(LearnedModels { num_actions: na, entries })
}

/// The MDP over clusters with visit counts `xi` as the member weighting.
#[derive(Clone, Debug, PartialEq)]
pub struct SummarizedMdp {
    /// Keyed by cluster id.
    pub model: LayeredModel<usize>,
    /// Total data visits of each cluster.
    pub weights: Vec<u64>,
}

impl SummarizedMdp {
    pub fn num_clusters(&self) -> usize {
        self.weights.len()
    }
}

/// Aggregates `emp` through `Phi`: counts add, `r^` and `P^` are count-weighted
/// means, and successor histories map through [`Aggregator::assign`].
pub fn build_summarized_mdp(agg: &Aggregator, emp: &EmpiricalModel, encoder: &Encoder) -> Result<SummarizedMdp> {
    let na = emp.num_actions;
    let nz = agg.num_clusters();
    let mut acc: Vec<Vec<(u64, f64, BTreeMap<usize, u64>)>> = vec![vec![(0, 0.0, BTreeMap::new()); na]; nz];
    let mut weights = vec![0u64; nz];
    for (key, row) in &emp.table {
        let z = cluster_of(agg, key)?;
        let history = key.decode()?;
        for (a, st) in row.iter().enumerate() {
            if st.count == 0 {
                continue;
            }
            weights[z] += st.count;
            let slot = &mut acc[z][a];
            slot.0 += st.count;
            slot.1 += st.reward_sum;
            if history.depth() < emp.horizon {
                for (&o, &c) in &st.next {
                    let child = history.extended(a, o);
                    let zc = agg
                        .assign(&child, encoder)
                        .ok_or_else(|| Error::UnassignedHistory(child.to_string()))?;
                    *slot.2.entry(zc).or_insert(0) += c;
                }
            }
        }
    }
    let nodes = acc
        .into_iter()
        .enumerate()
        .map(|(z, row)| LayeredNode {
            key: z,
            depth: agg.center_depths[z],
            actions: row
                .into_iter()
                .map(|(n, rs, next)| {
                    (n > 0).then(|| Transition {
                        count: n,
                        r_hat: rs / n as f64,
                        successors: next.into_iter().map(|(zc, c)| (zc, c as f64 / n as f64)).collect(),
                    })
                })
                .collect(),
        })
        .collect();
    Ok(SummarizedMdp {
        model: LayeredModel::from_nodes(na, emp.horizon, nodes),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::generate_dataset;
    use crate::data::empirical::estimate_empirical;
    use crate::data::mixture::MixtureSpec;
    use crate::envs::random::random_pomdp;
    use crate::history::History;
    use crate::pomdp::RewardNoise;
    use crate::representation::cluster::cluster;
    use crate::representation::embedding::EmbeddingTable;
    use crate::sim::stream_rng;

    fn sample_emp() -> EmpiricalModel {
        let m = random_pomdp(3, 2, 3, 3, &mut stream_rng(2, 0)).with_reward_noise(RewardNoise::Bernoulli);
        estimate_empirical(&generate_dataset(&m, &MixtureSpec::uniform_random(2), 60, 9))
    }

    fn singleton_table(emp: &EmpiricalModel) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(1);
        for (i, k) in emp.table.keys().enumerate() {
            t.insert(k.clone(), vec![i as f64]).unwrap();
        }
        t
    }

    #[test]
    fn singleton_clusters_reproduce_the_empirical_model() {
        let emp = sample_emp();
        let table = singleton_table(&emp);
        let agg = cluster(&table, 0.0, true);
        let s = build_summarized_mdp(&agg, &emp, &Encoder::Table(table)).unwrap();
        let raw = LayeredModel::from_empirical(&emp);
        for node in &raw.nodes {
            let Some(&z) = agg.assignment.get(&node.key) else {
                // Leaf histories with no outgoing data have no cluster.
                assert_eq!(node.visits(), 0);
                continue;
            };
            let sn = &s.model.nodes[s.model.node_of(&z).unwrap()];
            for a in 0..2 {
                match (&node.actions[a], &sn.actions[a]) {
                    (None, None) => {}
                    (Some(t), Some(u)) => {
                        assert_eq!(t.count, u.count);
                        assert!((t.r_hat - u.r_hat).abs() < 1e-15);
                        let mapped: Vec<(usize, f64)> = t
                            .successors
                            .iter()
                            .filter_map(|&(c, p)| agg.assignment.get(&raw.nodes[c].key).map(|&zc| (zc, p)))
                            .collect();
                        assert_eq!(mapped.len(), u.successors.len());
                        for (zc, p) in mapped {
                            let id = s.model.node_of(&zc).unwrap();
                            let q = u.successors.iter().find(|e| e.0 == id).unwrap().1;
                            assert!((p - q).abs() < 1e-15);
                        }
                    }
                    _ => panic!("coverage differs at {:?}", node.key),
                }
            }
        }
    }

    #[test]
    fn counts_are_conserved() {
        let emp = sample_emp();
        let mut table = singleton_table(&emp);
        for v in table.vectors.values_mut() {
            v[0] = (v[0] / 4.0).floor();
        }
        let agg = cluster(&table, 0.0, true);
        let s = build_summarized_mdp(&agg, &emp, &Encoder::Table(table)).unwrap();
        for a in 0..2 {
            let raw: u64 = emp.table.values().map(|row| row[a].count).sum();
            let summed: u64 = s.model.nodes.iter().map(|n| n.count(a)).sum();
            assert_eq!(raw, summed);
        }
    }

    #[test]
    fn weighted_reward_matches_raw_transitions() {
        // Three histories visited 1, 2 and 1 times, merged into one cluster.
        let mut emp = EmpiricalModel::new(1, 3, 1);
        let raw = [(0, vec![1.0]), (1, vec![0.0, 0.5]), (2, vec![0.25])];
        for (o, rewards) in &raw {
            for &r in rewards {
                emp.add(&History::initial(*o), 0, r, 0);
            }
        }
        let mut table = EmbeddingTable::new(1);
        for o in 0..3 {
            table.insert(History::initial(o).key(), vec![0.0]).unwrap();
        }
        let agg = cluster(&table, 0.0, true);
        let s = build_summarized_mdp(&agg, &emp, &Encoder::Table(table)).unwrap();
        let t = s.model.nodes[0].actions[0].as_ref().unwrap();
        let all: Vec<f64> = raw.iter().flat_map(|(_, r)| r.iter().copied()).collect();
        assert_eq!(t.count, 4);
        assert!((t.r_hat - all.iter().sum::<f64>() / 4.0).abs() < 1e-15);
        assert_eq!(s.weights, vec![4]);
        let models = fit_learned_models(&agg, &emp).unwrap();
        assert_eq!(models.get(0, 0).unwrap().p_hat, vec![(0, 1.0)]);
    }

    #[test]
    fn unassigned_history_is_an_error() {
        let emp = sample_emp();
        let agg = cluster(&EmbeddingTable::new(1), 0.0, true);
        assert!(matches!(fit_learned_models(&agg, &emp), Err(Error::UnassignedHistory(_))));
    }
}
