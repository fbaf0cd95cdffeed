//! History embeddings: a per-history table and a linear feature encoder.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{HistKey, History};

/// `phi` as an explicit map from history key to a `dim`-vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<HistKey, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    /// Vectors drawn i.i.d. uniform in `[-scale, scale]`, one per key.
    pub fn random<'a>(dim: usize, keys: impl IntoIterator<Item = &'a HistKey>, scale: f64, rng: &mut impl Rng) -> Self {
        let mut table = EmbeddingTable::new(dim);
        let mut keys: Vec<&HistKey> = keys.into_iter().collect();
        keys.sort();
        keys.dedup();
        for k in keys {
            let v = (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect();
            table.vectors.insert(k.clone(), v);
        }
        table
    }

    pub fn insert(&mut self, key: HistKey, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim || vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::DegenerateInput(format!("embedding for {key} must be {} finite values", self.dim)));
        }
        self.vectors.insert(key, vector);
        Ok(())
    }

    pub fn get(&self, key: &HistKey) -> Result<&[f64]> {
        self.vectors
            .get(key)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::MissingEmbedding(key.to_string()))
    }

    /// Embedding of the longest embedded prefix of `history`, else zeros.
    pub fn embed_or_fallback(&self, history: &History) -> Vec<f64> {
        for depth in (1..=history.depth()).rev() {
            if let Some(v) = self.vectors.get(&history.prefix(depth).key()) {
                return v.clone();
            }
        }
        vec![0.0; self.dim]
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `d^_phi(tau, tau') = ||phi(tau) - phi(tau')||^2`.
pub fn embed_distance(phi: &EmbeddingTable, a: &HistKey, b: &HistKey) -> Result<f64> {
    Ok(squared_distance(phi.get(a)?, phi.get(b)?))
}

/// Sparse binary features of a history: the last observation one-hot, followed
/// by indicators of every observation seen so far.
pub fn history_features(history: &History, num_observations: usize) -> Vec<usize> {
    let mut f = vec![history.last_observation()];
    let mut seen: Vec<usize> = history.observations().iter().map(|&o| num_observations + o as usize).collect();
    seen.sort_unstable();
    seen.dedup();
    f.extend(seen);
    f
}

/// `phi(tau) = sum of W columns over the active features of tau`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub dim: usize,
    pub num_observations: usize,
    /// `2 * num_observations` columns of length `dim`.
    pub weights: Vec<Vec<f64>>,
}

impl FeatureEncoder {
    pub fn random(dim: usize, num_observations: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let weights = (0..2 * num_observations)
            .map(|_| (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect())
            .collect();
        FeatureEncoder {
            dim,
            num_observations,
            weights,
        }
    }

    pub fn features(&self, history: &History) -> Vec<usize> {
        history_features(history, self.num_observations)
    }

    pub fn embed_features(&self, features: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &f in features {
            for (x, w) in v.iter_mut().zip(&self.weights[f]) {
                *x += w;
            }
        }
        v
    }

    pub fn embed(&self, history: &History) -> Vec<f64> {
        self.embed_features(&self.features(history))
    }
}

/// The trainable encoder used by representation learning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Encoder {
    Table(EmbeddingTable),
    Features(FeatureEncoder),
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Encoder::Table(t) => t.dim,
            Encoder::Features(f) => f.dim,
        }
    }

    /// Embeds any history; the table variant falls back to the longest embedded prefix.
    pub fn embed(&self, history: &History) -> Vec<f64> {
        match self {
            Encoder::Table(t) => t.embed_or_fallback(history),
            Encoder::Features(f) => f.embed(history),
        }
    }

    /// Materializes the embeddings of `histories` as a table.
    pub fn table_for<'a>(&self, histories: impl IntoIterator<Item = &'a History>) -> EmbeddingTable {
        let mut table = EmbeddingTable::new(self.dim());
        for h in histories {
            table.vectors.insert(h.key(), self.embed(h));
        }
        table
    }

    /// `self <- (1 - alpha) self + alpha other`, parameter by parameter.
    ///
    /// Table entries missing from `self` are copied from `other`.
    pub fn ema_towards(&mut self, other: &Encoder, alpha: f64) -> Result<()> {
        let mix = |a: &mut Vec<f64>, b: &[f64]| {
            for (x, y) in a.iter_mut().zip(b) {
                // Written as a step towards `y` so equal parameters stay bit-identical.
                *x = if alpha == 1.0 { *y } else { *x + alpha * (y - *x) };
            }
        };
        match (self, other) {
            (Encoder::Table(a), Encoder::Table(b)) => {
                for (k, v) in &b.vectors {
                    match a.vectors.get_mut(k) {
                        Some(x) => mix(x, v),
                        None => {
                            a.vectors.insert(k.clone(), v.clone());
                        }
                    }
                }
            }
            (Encoder::Features(a), Encoder::Features(b)) => {
                for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                    mix(x, y);
                }
            }
            _ => return Err(Error::Config("target and online encoders differ in kind".into())),
        }
        Ok(())
    }

    /// `max |parameter difference|`.
    pub fn max_abs_diff(&self, other: &Encoder) -> f64 {
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        match (self, other) {
            (Encoder::Table(a), Encoder::Table(b)) => a
                .vectors
                .iter()
                .map(|(k, v)| b.vectors.get(k).map_or(f64::INFINITY, |w| diff(v, w)))
                .fold(0.0, f64::max),
            (Encoder::Features(a), Encoder::Features(b)) => {
                a.weights.iter().zip(&b.weights).map(|(v, w)| diff(v, w)).fold(0.0, f64::max)
            }
            _ => f64::INFINITY,
        }
    }
}
