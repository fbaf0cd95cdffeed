//! Greedy epsilon-ball clustering of embedded histories into the aggregator `Phi`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bisim::metric::DepthIndexedMetric;
use crate::history::{HistKey, History};
use crate::representation::embedding::{squared_distance, EmbeddingTable, Encoder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregator {
    /// Radius on the squared embedding distance.
    pub epsilon: f64,
    /// When set, only histories of equal depth share a cluster.
    pub depth_restricted: bool,
    pub assignment: HashMap<HistKey, usize>,
    pub centers: Vec<Vec<f64>>,
    pub center_keys: Vec<HistKey>,
    pub center_depths: Vec<usize>,
}

impl Aggregator {
    pub fn num_clusters(&self) -> usize {
        self.centers.len()
    }

    /// Largest squared distance from a member to its center.
    pub fn max_center_radius(&self, table: &EmbeddingTable) -> f64 {
        self.assignment
            .iter()
            .filter_map(|(k, &z)| table.vectors.get(k).map(|v| squared_distance(v, &self.centers[z])))
            .fold(0.0, f64::max)
    }

    /// Nearest center to `vector` among those eligible for `depth`; ties go to the lowest id.
    ///
    /// With depth restriction and no center at `depth`, every center is eligible.
    pub fn nearest(&self, vector: &[f64], depth: usize) -> Option<usize> {
        let restricted = self.depth_restricted && self.center_depths.contains(&depth);
        let mut best: Option<(f64, usize)> = None;
        for (z, c) in self.centers.iter().enumerate() {
            if restricted && self.center_depths[z] != depth {
                continue;
            }
            let d = squared_distance(vector, c);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, z));
            }
        }
        best.map(|(_, z)| z)
    }

    /// `Phi(tau)`: the training-time cluster of a seen history, otherwise the
    /// nearest center to its embedding. `None` only when there are no clusters.
    pub fn assign(&self, history: &History, encoder: &Encoder) -> Option<usize> {
        if let Some(&z) = self.assignment.get(&history.key()) {
            return Some(z);
        }
        self.nearest(&encoder.embed(history), history.depth())
    }

    /// Members of every cluster, each list in key order.
    pub fn members(&self) -> Vec<Vec<HistKey>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (k, &z) in &self.assignment {
            out[z].push(k.clone());
        }
        for m in &mut out {
            m.sort();
        }
        out
    }
}

/// Greedy cover in `(depth, key)` order: the first unassigned history opens a
/// cluster and every later unassigned history within `epsilon` of it joins.
///
/// Scanning once and joining the earliest open center within `epsilon` gives the
/// same result, since a history that no earlier center claims opens its own.
pub fn cluster(table: &EmbeddingTable, epsilon: f64, depth_restricted: bool) -> Aggregator {
    let mut keys: Vec<&HistKey> = table.vectors.keys().collect();
    keys.sort_by(|a, b| (a.depth(), *a).cmp(&(b.depth(), *b)));
    let mut agg = Aggregator {
        epsilon,
        depth_restricted,
        assignment: HashMap::with_capacity(keys.len()),
        centers: Vec::new(),
        center_keys: Vec::new(),
        center_depths: Vec::new(),
    };
    // Identical vectors always land together, so decisions are cached per vector.
    let mut seen: HashMap<(usize, Vec<u64>), usize> = HashMap::new();
    let mut by_depth: HashMap<usize, Vec<usize>> = HashMap::new();
    for key in keys {
        let v = &table.vectors[key];
        let depth = key.depth();
        let bits = (if depth_restricted { depth } else { 0 }, v.iter().map(|x| x.to_bits()).collect());
        if let Some(&z) = seen.get(&bits) {
            agg.assignment.insert(key.clone(), z);
            continue;
        }
        let candidates: &[usize] = if depth_restricted {
            by_depth.get(&depth).map_or(&[], |c| c.as_slice())
        } else {
            by_depth.get(&0).map_or(&[], |c| c.as_slice())
        };
        let z = match candidates.iter().find(|&&z| squared_distance(v, &agg.centers[z]) <= epsilon) {
            Some(&z) => z,
            None => {
                let z = agg.centers.len();
                agg.centers.push(v.clone());
                agg.center_keys.push(key.clone());
                agg.center_depths.push(depth);
                by_depth.entry(if depth_restricted { depth } else { 0 }).or_default().push(z);
                z
            }
        };
        seen.insert(bits, z);
        agg.assignment.insert(key.clone(), z);
    }
    agg
}

/// Greedy cover per depth on a history metric directly, in key order.
///
/// The returned table places each cluster at its own point on a line, spaced
/// beyond `epsilon`, so the aggregator can be used with a table encoder.
pub fn cluster_metric(metric: &DepthIndexedMetric, epsilon: f64) -> (Aggregator, EmbeddingTable) {
    let mut agg = Aggregator {
        epsilon,
        depth_restricted: true,
        assignment: HashMap::new(),
        centers: Vec::new(),
        center_keys: Vec::new(),
        center_depths: Vec::new(),
    };
    let mut table = EmbeddingTable::new(1);
    let spacing = 2.0 * (epsilon.sqrt() + 1.0);
    for (d, layer) in metric.layers.iter().enumerate() {
        let mut order: Vec<usize> = (0..layer.len()).collect();
        order.sort_by(|&i, &j| layer.keys[i].cmp(&layer.keys[j]));
        // Centers of this depth as (layer index, cluster id); decisions cached per class.
        let mut open: Vec<(usize, usize)> = Vec::new();
        let mut by_class: HashMap<usize, usize> = HashMap::new();
        for i in order {
            let class = layer.class_of[i];
            let z = match by_class.get(&class) {
                Some(&z) => z,
                None => {
                    let z = match open.iter().find(|&&(c, _)| layer.get(i, c) <= epsilon) {
                        Some(&(_, z)) => z,
                        None => {
                            let z = agg.centers.len();
                            agg.centers.push(vec![z as f64 * spacing]);
                            agg.center_keys.push(layer.keys[i].clone());
                            agg.center_depths.push(d + 1);
                            open.push((i, z));
                            z
                        }
                    };
                    by_class.insert(class, z);
                    z
                }
            };
            agg.assignment.insert(layer.keys[i].clone(), z);
            table.vectors.insert(layer.keys[i].clone(), agg.centers[z].clone());
        }
    }
    (agg, table)
}
