//! The bisimulation loss `J(phi)` and its analytic gradient.
//!
//! For a pair `(tau, tau')` with target clusters `z, z'` and actions drawn from
//! `pi^(.|z)`, `pi^(.|z')`, the residual is
//! `||phi(tau) - phi(tau')|| - (|r^(z, a) - r^(z', a')| + ||P^(.|z, a) - P^(.|z', a')||_1)`
//! and the loss is the mean squared residual. The norm here is unsquared even
//! though `d^_phi` is the squared norm; [`LossReport::squared_form`] tracks the
//! squared variant for comparison.

use std::collections::HashMap;

use rand::Rng;

use crate::bisim::transport::tv_distance_sparse;
use crate::error::{Error, Result};
use crate::history::HistKey;
use crate::policy::uniform;
use crate::representation::cluster::Aggregator;
use crate::representation::embedding::EmbeddingTable;
use crate::representation::summarized::LearnedModels;

/// A history pair plus the uniform draw that couples the two action samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    pub a: HistKey,
    pub b: HistKey,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairTarget {
    pub a: HistKey,
    pub b: HistKey,
    pub target: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TargetBatch {
    pub pairs: Vec<PairTarget>,
    /// Pairs dropped because a sampled `(z, a)` has no data.
    pub skipped: usize,
}

/// Inverse-CDF draw; with a shared `u`, equal distributions give equal actions.
pub fn coupled_action(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (a, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// One-step targets from the target representation's clusters, models and policy.
///
/// `policy[z]` is `pi^(.|z)`; clusters beyond its length act uniformly.
pub fn pair_targets(target_agg: &Aggregator, models: &LearnedModels, policy: &[Vec<f64>], batch: &[PairSample]) -> Result<TargetBatch> {
    let cluster = |k: &HistKey| {
        target_agg
            .assignment
            .get(k)
            .copied()
            .ok_or_else(|| Error::UnassignedHistory(k.to_string()))
    };
    let fallback = uniform(models.num_actions);
    let mut out = TargetBatch::default();
    for s in batch {
        let (za, zb) = (cluster(&s.a)?, cluster(&s.b)?);
        let aa = coupled_action(policy.get(za).unwrap_or(&fallback), s.u);
        let ab = coupled_action(policy.get(zb).unwrap_or(&fallback), s.u);
        match (models.get(za, aa), models.get(zb, ab)) {
            (Ok(ma), Ok(mb)) => out.pairs.push(PairTarget {
                a: s.a.clone(),
                b: s.b.clone(),
                target: (ma.r_hat - mb.r_hat).abs() + tv_distance_sparse(&ma.p_hat, &mb.p_hat),
            }),
            _ => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Draws `n` pairs among `keys`, same-depth when `same_depth` is set.
pub fn sample_pairs(keys: &[HistKey], n: usize, same_depth: bool, rng: &mut impl Rng) -> Vec<PairSample> {
    let mut by_depth: HashMap<usize, Vec<usize>> = HashMap::new();
    if same_depth {
        for (i, k) in keys.iter().enumerate() {
            by_depth.entry(k.depth()).or_default().push(i);
        }
    }
    (0..n)
        .map(|_| {
            let i = rng.gen_range(0..keys.len());
            let j = if same_depth {
                let peers = &by_depth[&keys[i].depth()];
                peers[rng.gen_range(0..peers.len())]
            } else {
                rng.gen_range(0..keys.len())
            };
            PairSample {
                a: keys[i].clone(),
                b: keys[j].clone(),
                u: rng.gen(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Mean of `(||phi(tau) - phi(tau')||^2 - target)^2`.
    pub squared_form: f64,
    pub pairs: usize,
    pub skipped: usize,
}

fn norm_diff(phi: &EmbeddingTable, p: &PairTarget) -> Result<(Vec<f64>, f64)> {
    let (x, y) = (phi.get(&p.a)?, phi.get(&p.b)?);
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    Ok((diff, norm))
}

pub fn bisim_loss_report(phi: &EmbeddingTable, batch: &TargetBatch) -> Result<LossReport> {
    let mut report = LossReport {
        pairs: batch.pairs.len(),
        skipped: batch.skipped,
        ..Default::default()
    };
    if batch.pairs.is_empty() {
        return Ok(report);
    }
    for p in &batch.pairs {
        let (_, norm) = norm_diff(phi, p)?;
        report.loss += (norm - p.target).powi(2);
        report.squared_form += (norm * norm - p.target).powi(2);
    }
    let n = batch.pairs.len() as f64;
    report.loss /= n;
    report.squared_form /= n;
    Ok(report)
}

pub fn bisim_loss(phi: &EmbeddingTable, batch: &TargetBatch) -> Result<f64> {
    Ok(bisim_loss_report(phi, batch)?.loss)
}

/// `dJ/dphi(tau)` for every history in the batch.
///
/// At `phi(tau) = phi(tau')` the norm is not differentiable; its subgradient is taken as 0.
pub fn bisim_loss_gradient(phi: &EmbeddingTable, batch: &TargetBatch) -> Result<HashMap<HistKey, Vec<f64>>> {
    let mut grad: HashMap<HistKey, Vec<f64>> = HashMap::new();
    let n = batch.pairs.len() as f64;
    for p in &batch.pairs {
        let (diff, norm) = norm_diff(phi, p)?;
        let scale = if norm > 0.0 { 2.0 * (norm - p.target) / (n * norm) } else { 0.0 };
        for (key, sign) in [(&p.a, 1.0), (&p.b, -1.0)] {
            let g = grad.entry(key.clone()).or_insert_with(|| vec![0.0; phi.dim]);
            for (gi, d) in g.iter_mut().zip(&diff) {
                *gi += sign * scale * d;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::History;
    use crate::representation::cluster::cluster;
    use crate::representation::summarized::ModelEntry;
    use crate::sim::stream_rng;

    fn key(o: usize) -> HistKey {
        History::initial(o).key()
    }

    #[test]
    fn coupled_draws_agree_for_equal_policies() {
        let p = [0.2, 0.5, 0.3];
        for i in 0..100 {
            let u = i as f64 / 100.0;
            assert_eq!(coupled_action(&p, u), coupled_action(&p.clone(), u));
        }
        assert_eq!(coupled_action(&[0.0, 1.0], 0.0), 1);
        assert_eq!(coupled_action(&[0.5, 0.5, 0.0], 0.9999999999999999), 1);
    }

    #[test]
    fn zero_embeddings_and_equal_models_give_zero_loss() {
        let mut phi = EmbeddingTable::new(2);
        for o in 0..2 {
            phi.insert(key(o), vec![0.0, 0.0]).unwrap();
        }
        let agg = cluster(&phi, 0.0, true);
        let entry = ModelEntry {
            count: 3,
            r_hat: 0.4,
            p_hat: vec![(0, 0.5), (1, 0.5)],
        };
        let models = LearnedModels {
            num_actions: 1,
            entries: vec![vec![Some(entry)]],
        };
        let batch = pair_targets(&agg, &models, &[vec![1.0]], &[PairSample { a: key(0), b: key(1), u: 0.3 }]).unwrap();
        assert_eq!(bisim_loss(&phi, &batch).unwrap(), 0.0);
        assert!(bisim_loss_gradient(&phi, &batch).unwrap().values().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_gap_gives_unit_loss() {
        let mut phi = EmbeddingTable::new(1);
        phi.insert(key(0), vec![0.0]).unwrap();
        phi.insert(key(1), vec![1.0]).unwrap();
        let batch = TargetBatch {
            pairs: vec![PairTarget { a: key(0), b: key(1), target: 0.0 }],
            skipped: 0,
        };
        assert_eq!(bisim_loss(&phi, &batch).unwrap(), 1.0);
    }

    #[test]
    fn coincident_embeddings_use_zero_subgradient() {
        let mut phi = EmbeddingTable::new(2);
        phi.insert(key(0), vec![0.3, 0.3]).unwrap();
        phi.insert(key(1), vec![0.3, 0.3]).unwrap();
        let batch = TargetBatch {
            pairs: vec![PairTarget { a: key(0), b: key(1), target: 0.7 }],
            skipped: 0,
        };
        assert!((bisim_loss(&phi, &batch).unwrap() - 0.49).abs() < 1e-15);
        let g = bisim_loss_gradient(&phi, &batch).unwrap();
        assert_eq!(g[&key(0)], vec![0.0, 0.0]);
    }

    #[test]
    fn missing_model_entries_are_skipped() {
        let mut phi = EmbeddingTable::new(1);
        phi.insert(key(0), vec![0.0]).unwrap();
        phi.insert(key(1), vec![5.0]).unwrap();
        let agg = cluster(&phi, 0.0, true);
        let seen = ModelEntry {
            count: 1,
            r_hat: 0.0,
            p_hat: vec![(0, 1.0)],
        };
        let models = LearnedModels {
            num_actions: 1,
            entries: vec![vec![Some(seen)], vec![None]],
        };
        let batch = pair_targets(&agg, &models, &[], &[PairSample { a: key(0), b: key(1), u: 0.5 }]).unwrap();
        assert_eq!((batch.pairs.len(), batch.skipped), (0, 1));
        assert_eq!(bisim_loss(&phi, &batch).unwrap(), 0.0);
    }

    #[test]
    fn same_depth_sampling() {
        let keys: Vec<HistKey> = (0..4)
            .flat_map(|o| [History::initial(o).key(), History::initial(o).extended(0, 1).key()])
            .collect();
        for p in sample_pairs(&keys, 200, true, &mut stream_rng(1, 0)) {
            assert_eq!(p.a.depth(), p.b.depth());
            assert!((0.0..1.0).contains(&p.u));
        }
    }
}
