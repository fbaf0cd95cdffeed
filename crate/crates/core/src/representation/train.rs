//! The representation-learning loop: encoder steps on the bisimulation loss,
//! re-clustering of the target encoder, model refits, an inner offline solver on
//! the summarized MDP, and the EMA target update.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::cql::{cql_updates, CqlConfig, CqlData, KeyedTransition};
use crate::data::dataset::Dataset;
use crate::data::empirical::estimate_empirical;
use crate::error::{Error, Result};
use crate::history::{HistKey, History};
use crate::pevi::{pevi_solve, BonusParams, SolveMode};
use crate::policy::{argmax, one_hot, uniform, Policy};
use crate::representation::cluster::Aggregator;
use crate::representation::embedding::{squared_distance, EmbeddingTable, Encoder, FeatureEncoder};
use crate::representation::loss::{bisim_loss_gradient, bisim_loss_report, coupled_action, PairTarget, TargetBatch};
use crate::representation::summarized::{build_summarized_mdp, LearnedModels, ModelEntry, SummarizedMdp};
use crate::sim::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// One free vector per history.
    Table,
    /// Linear in the last observation and the set of visited observations.
    Features,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationConfig {
    pub dim: usize,
    /// Encoder step size.
    pub eta: f64,
    /// Target update rate.
    pub ema_alpha: f64,
    /// Clustering radius on the squared embedding distance.
    pub epsilon: f64,
    pub iterations: usize,
    pub updates_per_iter: usize,
    pub batch_size: usize,
    pub encoder: EncoderKind,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Initial scale of the visited-set weights of the feature encoder.
    pub visited_init_scale: f64,
    pub depth_restricted: bool,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        RepresentationConfig {
            dim: 16,
            eta: 0.05,
            ema_alpha: 0.1,
            epsilon: 0.1,
            iterations: 100,
            updates_per_iter: 200,
            batch_size: 32,
            encoder: EncoderKind::Table,
            init_scale: 0.01,
            visited_init_scale: 0.01,
            depth_restricted: true,
        }
    }
}

impl RepresentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be a non-negative number, got {}", self.eta)));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(Error::Config(format!("ema alpha must be in (0, 1], got {}", self.ema_alpha)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("dim and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum InnerTrainer {
    Cql(CqlConfig),
    /// PEVI on the summarized MDP; `iota` overrides the default log factor.
    Pevi { iota: Option<f64> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub loss: f64,
    /// Loss of the encoder at the end of the iteration on a fixed pair set.
    pub eval_loss: f64,
    pub squared_form: f64,
    pub skipped: usize,
    pub cluster_count: usize,
    pub max_center_radius: f64,
}

/// `pi^(. | Phi(tau))` with histories embedded by a frozen encoder snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterPolicy {
    pub num_actions: usize,
    pub aggregator: Aggregator,
    pub encoder: Encoder,
    /// Per cluster; clusters without data act uniformly.
    pub actions: Vec<Vec<f64>>,
}

impl Policy for ClusterPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        self.aggregator
            .assign(history, &self.encoder)
            .and_then(|z| self.actions.get(z).cloned())
            .unwrap_or_else(|| uniform(self.num_actions))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub phi: Encoder,
    pub phi_bar: Encoder,
    pub aggregator: Aggregator,
    pub models: LearnedModels,
    pub summarized: SummarizedMdp,
    pub policy: ClusterPolicy,
    pub series: Vec<IterationStats>,
}

/// Dataset histories in `(depth, key)` order with everything the loop reuses.
struct Corpus {
    histories: Vec<History>,
    keys: Vec<HistKey>,
    /// Feature-set id per history (feature encoder) or the history index (table).
    vector_id: Vec<usize>,
    feature_sets: Vec<Vec<usize>>,
    /// `(history, action, reward, next observation, next history)`.
    transitions: Vec<(usize, usize, f64, usize, Option<usize>)>,
    by_depth: HashMap<usize, Vec<usize>>,
}

impl Corpus {
    fn new(dataset: &Dataset) -> Result<Self> {
        let (keys, keyed) = crate::agents::cql::index_dataset(dataset);
        let histories = keys.iter().map(|k| k.decode()).collect::<Result<Vec<_>>>()?;
        let transitions = keyed
            .iter()
            .zip(dataset.transitions())
            .map(|(t, (_, step))| (t.key, t.action, t.reward, step.next_observation, t.next))
            .collect();
        let mut by_depth: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, h) in histories.iter().enumerate() {
            by_depth.entry(h.depth()).or_default().push(i);
        }
        Ok(Corpus {
            histories,
            keys,
            vector_id: Vec::new(),
            feature_sets: Vec::new(),
            transitions,
            by_depth,
        })
    }

    fn index_features(&mut self, encoder: &FeatureEncoder) {
        let mut ids: HashMap<Vec<usize>, usize> = HashMap::new();
        self.vector_id = self
            .histories
            .iter()
            .map(|h| {
                let f = encoder.features(h);
                let next = ids.len();
                let id = *ids.entry(f.clone()).or_insert(next);
                if id == next {
                    self.feature_sets.push(f);
                }
                id
            })
            .collect();
    }
}

/// Embeddings of every corpus vector id under `encoder`.
fn corpus_vectors(corpus: &Corpus, encoder: &Encoder) -> Vec<Vec<f64>> {
    match encoder {
        Encoder::Table(t) => corpus.keys.iter().map(|k| t.vectors[k].clone()).collect(),
        Encoder::Features(f) => corpus.feature_sets.iter().map(|s| f.embed_features(s)).collect(),
    }
}

struct Clustering {
    assign: Vec<usize>,
    centers: Vec<Vec<f64>>,
    center_items: Vec<usize>,
}

/// Same greedy rule as [`crate::representation::cluster::cluster`], over corpus indices.
fn cluster_corpus(corpus: &Corpus, vectors: &[Vec<f64>], epsilon: f64, depth_restricted: bool) -> Clustering {
    let mut out = Clustering {
        assign: Vec::with_capacity(corpus.histories.len()),
        centers: Vec::new(),
        center_items: Vec::new(),
    };
    let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
    let mut open: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, h) in corpus.histories.iter().enumerate() {
        let group = if depth_restricted { h.depth() } else { 0 };
        let vid = corpus.vector_id[i];
        if let Some(&z) = cache.get(&(group, vid)) {
            out.assign.push(z);
            continue;
        }
        let v = &vectors[vid];
        let candidates = open.entry(group).or_default();
        let z = match candidates.iter().find(|&&z| squared_distance(v, &out.centers[z]) <= epsilon) {
            Some(&z) => z,
            None => {
                let z = out.centers.len();
                out.centers.push(v.clone());
                out.center_items.push(i);
                candidates.push(z);
                z
            }
        };
        cache.insert((group, vid), z);
        out.assign.push(z);
    }
    out
}

fn fit_models(corpus: &Corpus, assign: &[usize], num_clusters: usize, num_actions: usize) -> LearnedModels {
    let mut acc: Vec<Vec<(u64, f64, HashMap<usize, u64>)>> = vec![vec![(0, 0.0, HashMap::new()); num_actions]; num_clusters];
    for &(h, a, r, o, _) in &corpus.transitions {
        let slot = &mut acc[assign[h]][a];
        slot.0 += 1;
        slot.1 += r;
        *slot.2.entry(o).or_insert(0) += 1;
    }
    let entries = acc
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(n, rs, next)| {
                    (n > 0).then(|| {
                        let mut p_hat: Vec<(usize, f64)> = next.into_iter().map(|(o, c)| (o, c as f64 / n as f64)).collect();
                        p_hat.sort_by_key(|e| e.0);
                        ModelEntry { count: n, r_hat: rs / n as f64, p_hat }
                    })
                })
                .collect()
        })
        .collect();
    LearnedModels { num_actions, entries }
}

fn to_aggregator(corpus: &Corpus, c: &Clustering, epsilon: f64, depth_restricted: bool) -> Aggregator {
    Aggregator {
        epsilon,
        depth_restricted,
        assignment: corpus.keys.iter().cloned().zip(c.assign.iter().copied()).collect(),
        centers: c.centers.clone(),
        center_keys: c.center_items.iter().map(|&i| corpus.keys[i].clone()).collect(),
        center_depths: c.center_items.iter().map(|&i| corpus.histories[i].depth()).collect(),
    }
}

fn init_encoder(corpus: &mut Corpus, config: &RepresentationConfig, num_observations: usize, rng: &mut impl Rng) -> Encoder {
    match config.encoder {
        EncoderKind::Table => {
            corpus.vector_id = (0..corpus.keys.len()).collect();
            Encoder::Table(EmbeddingTable::random(config.dim, &corpus.keys, config.init_scale, rng))
        }
        EncoderKind::Features => {
            let mut f = FeatureEncoder::random(config.dim, num_observations, config.init_scale, rng);
            for w in &mut f.weights[num_observations..] {
                for x in w.iter_mut() {
                    *x *= config.visited_init_scale / config.init_scale.max(f64::MIN_POSITIVE);
                }
            }
            corpus.index_features(&f);
            Encoder::Features(f)
        }
    }
}

fn draw_pair(corpus: &Corpus, depth_restricted: bool, rng: &mut impl Rng) -> (usize, usize, f64) {
    let n = corpus.keys.len();
    let i = rng.gen_range(0..n);
    let j = if depth_restricted {
        let peers = &corpus.by_depth[&corpus.histories[i].depth()];
        peers[rng.gen_range(0..peers.len())]
    } else {
        rng.gen_range(0..n)
    };
    (i, j, rng.gen())
}

/// Targets and embeddings for drawn `(i, j, u)` corpus pairs.
fn build_batch(
    corpus: &Corpus,
    phi: &Encoder,
    target_assign: &[usize],
    models: &LearnedModels,
    policy: &[Vec<f64>],
    draws: &[(usize, usize, f64)],
) -> (EmbeddingTable, TargetBatch) {
    let mut batch = TargetBatch::default();
    let mut table = EmbeddingTable::new(phi.dim());
    for &(i, j, u) in draws {
        let (zi, zj) = (target_assign[i], target_assign[j]);
        let (ai, aj) = (coupled_action(&policy[zi], u), coupled_action(&policy[zj], u));
        match (models.get(zi, ai), models.get(zj, aj)) {
            (Ok(mi), Ok(mj)) => {
                let target = (mi.r_hat - mj.r_hat).abs() + crate::bisim::transport::tv_distance_sparse(&mi.p_hat, &mj.p_hat);
                for k in [i, j] {
                    if !table.vectors.contains_key(&corpus.keys[k]) {
                        table.vectors.insert(corpus.keys[k].clone(), phi.embed(&corpus.histories[k]));
                    }
                }
                batch.pairs.push(PairTarget {
                    a: corpus.keys[i].clone(),
                    b: corpus.keys[j].clone(),
                    target,
                });
            }
            _ => batch.skipped += 1,
        }
    }
    (table, batch)
}

/// One gradient step of the encoder on a sampled pair batch.
fn encoder_step(
    corpus: &Corpus,
    phi: &mut Encoder,
    target_assign: &[usize],
    models: &LearnedModels,
    policy: &[Vec<f64>],
    config: &RepresentationConfig,
    rng: &mut impl Rng,
) -> Result<(f64, f64, usize)> {
    let draws: Vec<(usize, usize, f64)> = (0..config.batch_size).map(|_| draw_pair(corpus, config.depth_restricted, rng)).collect();
    let (table, batch) = build_batch(corpus, phi, target_assign, models, policy, &draws);
    let report = bisim_loss_report(&table, &batch)?;
    if config.eta > 0.0 && !batch.pairs.is_empty() {
        let grad = bisim_loss_gradient(&table, &batch)?;
        let mut keys: Vec<&HistKey> = grad.keys().collect();
        keys.sort();
        match phi {
            Encoder::Table(t) => {
                for k in keys {
                    let v = t.vectors.get_mut(k).expect("batch keys are embedded");
                    for (x, g) in v.iter_mut().zip(&grad[k]) {
                        *x -= config.eta * g;
                    }
                }
            }
            Encoder::Features(f) => {
                let mut dw: HashMap<usize, Vec<f64>> = HashMap::new();
                for k in keys {
                    let h = k.decode()?;
                    for feat in f.features(&h) {
                        let col = dw.entry(feat).or_insert_with(|| vec![0.0; f.dim]);
                        for (c, g) in col.iter_mut().zip(&grad[k]) {
                            *c += g;
                        }
                    }
                }
                let mut cols: Vec<(usize, Vec<f64>)> = dw.into_iter().collect();
                cols.sort_by_key(|c| c.0);
                for (feat, g) in cols {
                    for (x, gi) in f.weights[feat].iter_mut().zip(&g) {
                        *x -= config.eta * gi;
                    }
                }
            }
        }
    }
    Ok((report.loss, report.squared_form, batch.skipped))
}

const EVAL_PAIRS: usize = 4096;

/// Behavior frequencies per cluster, uniform where unvisited.
fn behavior_policy(models: &LearnedModels) -> Vec<Vec<f64>> {
    (0..models.entries.len())
        .map(|z| models.action_frequencies(z).unwrap_or_else(|| uniform(models.num_actions)))
        .collect()
}

/// Runs the full loop on `dataset`. Deterministic in `seed`.
pub fn train_representation(dataset: &Dataset, config: &RepresentationConfig, inner: &InnerTrainer, seed: u64) -> Result<TrainOutput> {
    train(dataset, config, inner, seed, None)
}

/// [`train_representation`] starting from `initial` instead of a random encoder.
/// A table encoder must embed every dataset history.
pub fn train_representation_from(
    dataset: &Dataset,
    config: &RepresentationConfig,
    inner: &InnerTrainer,
    seed: u64,
    initial: Encoder,
) -> Result<TrainOutput> {
    train(dataset, config, inner, seed, Some(initial))
}

fn train(dataset: &Dataset, config: &RepresentationConfig, inner: &InnerTrainer, seed: u64, initial: Option<Encoder>) -> Result<TrainOutput> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("representation learning needs a non-empty dataset".into()));
    }
    if let InnerTrainer::Cql(c) = inner {
        c.validate()?;
    }
    let meta = &dataset.meta;
    let na = meta.num_actions;
    let mut corpus = Corpus::new(dataset)?;
    // Stream 0 drives the inner CQL exactly as `tabular_cql` would use it.
    let mut cql_rng = stream_rng(seed, 0);
    let mut rng = stream_rng(seed, 2);
    let mut phi = match initial {
        None => init_encoder(&mut corpus, config, meta.num_observations, &mut rng),
        Some(Encoder::Table(t)) => {
            for k in &corpus.keys {
                t.get(k)?;
            }
            corpus.vector_id = (0..corpus.keys.len()).collect();
            Encoder::Table(t)
        }
        Some(Encoder::Features(f)) => {
            corpus.index_features(&f);
            Encoder::Features(f)
        }
    };
    let mut phi_bar = phi.clone();
    let emp = match inner {
        InnerTrainer::Pevi { .. } => Some(estimate_empirical(dataset)),
        InnerTrainer::Cql(_) => None,
    };

    let mut clustering = cluster_corpus(&corpus, &corpus_vectors(&corpus, &phi_bar), config.epsilon, config.depth_restricted);
    let mut snapshot = phi_bar.clone();
    let mut models = fit_models(&corpus, &clustering.assign, clustering.centers.len(), na);
    let mut policy = behavior_policy(&models);
    let mut q: Vec<Vec<f64>> = vec![vec![0.0; na]; clustering.centers.len()];
    let mut series = Vec::with_capacity(config.iterations);
    let mut summarized = None;
    let mut eval_rng = stream_rng(seed, 1);
    let eval_draws: Vec<(usize, usize, f64)> =
        (0..EVAL_PAIRS).map(|_| draw_pair(&corpus, config.depth_restricted, &mut eval_rng)).collect();

    for iteration in 0..config.iterations {
        // Encoder steps against the current targets.
        let (mut loss, mut squared_form, mut skipped) = (0.0, 0.0, 0);
        for _ in 0..config.updates_per_iter {
            let (l, s, k) = encoder_step(&corpus, &mut phi, &clustering.assign, &models, &policy, config, &mut rng)?;
            loss += l;
            squared_form += s;
            skipped += k;
        }
        let steps = config.updates_per_iter.max(1) as f64;
        let (table, batch) = build_batch(&corpus, &phi, &clustering.assign, &models, &policy, &eval_draws);
        let eval_loss = bisim_loss_report(&table, &batch)?.loss;

        // Re-cluster the target encoder and refit the models.
        let vectors = corpus_vectors(&corpus, &phi_bar);
        let next = cluster_corpus(&corpus, &vectors, config.epsilon, config.depth_restricted);
        let old_assign = std::mem::replace(&mut clustering, next).assign;
        snapshot = phi_bar.clone();
        models = fit_models(&corpus, &clustering.assign, clustering.centers.len(), na);
        let max_center_radius = corpus
            .vector_id
            .iter()
            .zip(&clustering.assign)
            .map(|(&v, &z)| squared_distance(&vectors[v], &clustering.centers[z]))
            .fold(0.0, f64::max);

        // Inner offline solver on the summarized problem.
        match inner {
            InnerTrainer::Cql(cql) => {
                // Warm start each new cluster from the old cluster of its center history.
                q = clustering.center_items.iter().map(|&i| q[old_assign[i]].clone()).collect();
                let transitions = corpus
                    .transitions
                    .iter()
                    .map(|&(h, a, r, _, next)| KeyedTransition {
                        key: clustering.assign[h],
                        action: a,
                        reward: r,
                        next: next.map(|n| clustering.assign[n]),
                    })
                    .collect();
                let data = CqlData::new(clustering.centers.len(), na, transitions);
                cql_updates(&mut q, &data, cql, cql.updates_per_iter, &mut cql_rng);
                policy = (0..data.num_keys)
                    .map(|z| if data.is_visited(z) { one_hot(na, argmax(&q[z])) } else { uniform(na) })
                    .collect();
            }
            InnerTrainer::Pevi { iota } => {
                let agg = to_aggregator(&corpus, &clustering, config.epsilon, config.depth_restricted);
                let s = build_summarized_mdp(&agg, emp.as_ref().expect("built for pevi"), &snapshot)?;
                let mut params = BonusParams::default_for(meta.num_observations, na, meta.horizon, dataset.len(), s.model.len().max(1));
                if let Some(iota) = iota {
                    params = params.with_iota(*iota);
                }
                let mode = if s.model.is_layered() { SolveMode::Backward } else { SolveMode::Sweeps };
                let sol = pevi_solve(&s.model, &params, mode)?;
                policy = (0..clustering.centers.len())
                    .map(|z| sol.action_probs(Some(&z)))
                    .collect();
                summarized = Some(s);
            }
        }

        phi_bar.ema_towards(&phi, config.ema_alpha)?;
        series.push(IterationStats {
            iteration,
            loss: loss / steps,
            eval_loss,
            squared_form: squared_form / steps,
            skipped,
            cluster_count: clustering.centers.len(),
            max_center_radius,
        });
    }

    let aggregator = to_aggregator(&corpus, &clustering, config.epsilon, config.depth_restricted);
    let summarized = match summarized {
        Some(s) => s,
        None => build_summarized_mdp(&aggregator, &estimate_empirical(dataset), &snapshot)?,
    };
    if policy.len() != clustering.centers.len() {
        // Zero iterations: act as the behavior policy.
        policy = behavior_policy(&models);
    }
    Ok(TrainOutput {
        phi,
        phi_bar,
        policy: ClusterPolicy {
            num_actions: na,
            aggregator: aggregator.clone(),
            encoder: snapshot,
            actions: policy,
        },
        aggregator,
        models,
        summarized,
        series,
    })
}
