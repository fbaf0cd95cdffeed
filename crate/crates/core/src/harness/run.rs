//! One grid point: build the environment and data, train, evaluate.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use crate::agents::bc::filtered_bc;
use crate::agents::cql::tabular_cql;
use crate::agents::eval::mean_stderr;
use crate::bisim::metric::exact_bisim_metric;
use crate::data::dataset::{generate_dataset, Dataset};
use crate::data::empirical::estimate_empirical;
use crate::data::io::load_dataset;
use crate::data::mixture::{MixtureComponent, MixtureSpec};
use crate::envs::gridworld::{self, Cell, Layout, ScriptedPolicy};
use crate::envs::random::{nuisance, random_pomdp, stitching};
use crate::envs::wordle::{self, MiniWordle};
use crate::error::{Error, Result};
use crate::harness::config::{AggregatorSource, Algorithm, EnvKind, EvaluationSpec, ExperimentConfig, MixtureKind};
use crate::history::{HistKey, History};
use crate::layered::LayeredModel;
use crate::ohmdp::{HistoryTree, OptimalSolution};
use crate::pevi::{pevi_solve, BonusParams, PessimisticSolution, SolveMode};
use crate::policy::{one_hot, FnPolicy, Policy, UniformPolicy};
use crate::pomdp::TabularPOMDP;
use crate::representation::cluster::{cluster_metric, Aggregator};
use crate::representation::embedding::Encoder;
use crate::representation::summarized::build_summarized_mdp;
use crate::representation::train::{train_representation, ClusterPolicy, InnerTrainer, IterationStats};
use crate::sim::{simulate, stream_rng, Trajectory};

/// Stream of `instance_seed` used to draw generated instances.
const INSTANCE_STREAM: u64 = 100;
/// Evaluation episodes use `seed ^ EVAL_SALT` so they never replay dataset streams.
const EVAL_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub struct Environment {
    pub kind: EnvKind,
    pub model: TabularPOMDP,
    pub layout: Option<Layout>,
    pub wordle: Option<MiniWordle>,
}

impl Environment {
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<Environment> {
        let spec = &config.environment;
        let mut rng = stream_rng(spec.instance_seed.unwrap_or(seed), INSTANCE_STREAM);
        let (mut layout, mut wordle) = (None, None);
        let model = match spec.kind {
            EnvKind::Gridworld => {
                let path = spec.layout.as_ref().ok_or_else(|| Error::Config("environment.layout is required".into()))?;
                let l = Layout::load(path)?;
                let m = gridworld::build(&l)?;
                layout = Some(l);
                m
            }
            EnvKind::Wordle => {
                let path = spec
                    .vocabulary
                    .as_ref()
                    .ok_or_else(|| Error::Config("environment.vocabulary is required".into()))?;
                let w = wordle::make_mini_wordle(&wordle::load_vocabulary(path)?, spec.word_length, spec.max_guesses)?;
                let m = w.model.clone();
                wordle = Some(w);
                m
            }
            EnvKind::Nuisance => nuisance::model(spec.states, spec.actions, spec.horizon, &mut rng),
            EnvKind::Stitching => stitching::model(),
            EnvKind::Random => random_pomdp(spec.states, spec.actions, spec.observations, spec.horizon, &mut rng),
        };
        Ok(Environment {
            kind: spec.kind,
            model,
            layout,
            wordle,
        })
    }

    pub fn mixture(&self, config: &ExperimentConfig) -> Result<MixtureSpec> {
        let na = self.model.num_actions();
        let spec = &config.dataset;
        match spec.mixture {
            MixtureKind::Uniform => Ok(MixtureSpec::uniform_random(na)),
            MixtureKind::GridworldUnsafe => {
                let layout = self
                    .layout
                    .as_ref()
                    .ok_or_else(|| Error::Config("gridworld-unsafe mixture needs the gridworld environment".into()))?;
                let scripted = ScriptedPolicy::towards(layout, layout.find(Cell::GoalDown), spec.scripted_noise);
                MixtureSpec::new(vec![
                    MixtureComponent {
                        id: "uniform".into(),
                        weight: 1.0 - spec.unsafe_weight,
                        policy: Arc::new(UniformPolicy { num_actions: na }),
                    },
                    MixtureComponent {
                        id: "scripted-unsafe".into(),
                        weight: spec.unsafe_weight,
                        policy: Arc::new(scripted),
                    },
                ])
            }
            MixtureKind::StitchingBehavior => {
                if self.kind != EnvKind::Stitching {
                    return Err(Error::Config("stitching-behavior mixture needs the stitching environment".into()));
                }
                let policy = FnPolicy {
                    num_actions: na,
                    f: move |h: &History| one_hot(na, stitching::behavior_action(h)),
                };
                Ok(MixtureSpec::single("stitching-behavior", Arc::new(policy)))
            }
        }
    }

    /// Reported episode score; Wordle uses -1 per incorrect guess and 0 for the correct one.
    pub fn score(&self, trajectory: &Trajectory) -> f64 {
        match self.kind {
            EnvKind::Wordle => wordle::score(trajectory),
            _ => trajectory.total_reward(),
        }
    }
}

/// `n` trajectories from `dataset.path` when set, else freshly generated from `seed`.
pub fn generate(config: &ExperimentConfig, env: &Environment, n: usize, seed: u64) -> Result<Dataset> {
    let Some(path) = &config.dataset.path else {
        return Ok(generate_dataset(&env.model, &env.mixture(config)?, n, seed));
    };
    let data = load_dataset(path)?;
    if data.meta.env_hash != env.model.fingerprint() {
        return Err(Error::Config(format!("{} was generated on a different environment", path.display())));
    }
    if n > data.len() {
        return Err(Error::Config(format!("{} holds {} trajectories, {n} requested", path.display(), data.len())));
    }
    Ok(data.truncated(n))
}

/// Optimal value of the fully observed latent MDP, an upper bound on `J(pi*)`.
pub fn latent_mdp_value(model: &TabularPOMDP) -> f64 {
    let (ns, na) = (model.num_states(), model.num_actions());
    let mut v = vec![0.0; ns];
    for _ in 0..model.horizon() {
        v = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| model.reward(s, a) + model.transition_row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum::<f64>())
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    model.initial_state_dist().iter().zip(&v).map(|(p, x)| p * x).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SubOptMode {
    /// Exact policy evaluation on the history tree.
    Exact,
    /// Monte-Carlo `J(pi)` against the latent-MDP bound on `J(pi*)`.
    MonteCarloBound,
}

impl SubOptMode {
    pub fn name(self) -> &'static str {
        match self {
            SubOptMode::Exact => "exact",
            SubOptMode::MonteCarloBound => "mc-bound",
        }
    }
}

/// What a run is measured against; shared by every run on one instance.
pub struct Reference {
    pub tree: Option<HistoryTree>,
    pub optimal: Option<OptimalSolution>,
    /// `J(pi*)`, or its latent-MDP bound when the tree is not built.
    pub optimal_return: f64,
    size_cap: usize,
    oracle: OnceLock<std::result::Result<(Aggregator, Encoder), String>>,
}

impl Reference {
    pub fn new(model: &TabularPOMDP, spec: &EvaluationSpec) -> Result<Reference> {
        let tree = if spec.exact {
            match HistoryTree::build_with(model, model.horizon(), spec.size_cap) {
                Ok(t) => Some(t),
                Err(Error::SizeLimitExceeded { .. }) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        let optimal = tree.as_ref().map(OptimalSolution::from_tree);
        let optimal_return = optimal.as_ref().map_or_else(|| latent_mdp_value(model), |o| o.optimal_return);
        Ok(Reference {
            tree,
            optimal,
            optimal_return,
            size_cap: spec.size_cap,
            oracle: OnceLock::new(),
        })
    }

    pub fn mode(&self) -> SubOptMode {
        if self.tree.is_some() {
            SubOptMode::Exact
        } else {
            SubOptMode::MonteCarloBound
        }
    }

    /// Clusters of the exact metric under `pi*`, computed once per instance.
    fn oracle_aggregator(&self, model: &TabularPOMDP, epsilon: f64) -> Result<(Aggregator, Encoder)> {
        let optimal = self.optimal.as_ref().ok_or(Error::SizeLimitExceeded { limit: self.size_cap })?;
        self.oracle
            .get_or_init(|| {
                let metric = exact_bisim_metric(model, &optimal.policy()).map_err(|e| e.to_string())?;
                let (agg, table) = cluster_metric(&metric, epsilon);
                Ok((agg, Encoder::Table(table)))
            })
            .clone()
            .map_err(Error::DegenerateInput)
    }
}

/// Greedy PEVI policy that owns its solution.
pub struct PeviPolicy(pub PessimisticSolution<HistKey>);

impl Policy for PeviPolicy {
    fn num_actions(&self) -> usize {
        self.0.num_actions
    }

    fn action_probs(&self, history: &History) -> Vec<f64> {
        self.0.action_probs(Some(&history.key()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub seed: u64,
    pub mean_reward: f64,
    pub reward_stderr: f64,
    pub subopt: f64,
    pub subopt_stderr: f64,
    pub subopt_mode: SubOptMode,
    pub cluster_count: usize,
    /// Seconds; kept out of the CSV outputs so they stay reproducible.
    pub wall_time: f64,
}

pub struct RunOutput {
    pub row: RunRow,
    pub policy: Box<dyn Policy + Send>,
    pub loss: Vec<IterationStats>,
    pub aggregator: Option<Aggregator>,
}

fn bonus_params(model: &TabularPOMDP, dataset: &Dataset, history_count: usize, iota: Option<f64>) -> BonusParams {
    let p = BonusParams::default_for(
        model.num_observations(),
        model.num_actions(),
        model.horizon(),
        dataset.len(),
        history_count,
    );
    match iota {
        Some(i) => p.with_iota(i),
        None => p,
    }
}

/// Trains `algorithm` on `dataset` and evaluates the result.
pub fn run_algorithm(
    config: &ExperimentConfig,
    env: &Environment,
    reference: &Reference,
    dataset: &Dataset,
    algorithm: Algorithm,
    seed: u64,
) -> Result<RunOutput> {
    let start = Instant::now();
    let model = &env.model;
    let alg = &config.algorithm;
    let mut loss = Vec::new();
    let mut aggregator = None;
    let (policy, cluster_count): (Box<dyn Policy + Send>, usize) = match algorithm {
        Algorithm::Pevi => {
            let layered = LayeredModel::from_empirical(&estimate_empirical(dataset));
            let count = reference.tree.as_ref().map_or(layered.len(), |t| t.len());
            let params = bonus_params(model, dataset, count, alg.pevi.iota);
            let sol = pevi_solve(&layered, &params, alg.pevi.mode)?;
            (Box::new(PeviPolicy(sol)), layered.len())
        }
        Algorithm::PeviPhi => match alg.pevi_phi.aggregator {
            AggregatorSource::Oracle => {
                let (agg, encoder) = reference.oracle_aggregator(model, alg.pevi_phi.epsilon)?;
                let s = build_summarized_mdp(&agg, &estimate_empirical(dataset), &encoder)?;
                let params = bonus_params(model, dataset, agg.num_clusters(), alg.pevi.iota);
                let mode = if s.model.is_layered() { alg.pevi.mode } else { SolveMode::Sweeps };
                let sol = pevi_solve(&s.model, &params, mode)?;
                let actions = (0..agg.num_clusters()).map(|z| sol.action_probs(Some(&z))).collect();
                let count = agg.num_clusters();
                aggregator = Some(agg.clone());
                let policy = ClusterPolicy {
                    num_actions: model.num_actions(),
                    aggregator: agg,
                    encoder,
                    actions,
                };
                (Box::new(policy), count)
            }
            AggregatorSource::Learned => {
                let out = train_representation(dataset, &alg.bisim, &InnerTrainer::Pevi { iota: alg.pevi.iota }, seed)?;
                let count = out.aggregator.num_clusters();
                loss = out.series;
                aggregator = Some(out.aggregator);
                (Box::new(out.policy), count)
            }
        },
        Algorithm::Cql => {
            let (policy, _) = tabular_cql(dataset, &alg.cql, seed)?;
            let count = policy.table.len();
            (Box::new(policy), count)
        }
        Algorithm::FilteredBc => {
            let policy = filtered_bc(dataset, alg.filtered_bc.keep_fraction)?;
            let count = policy.table.len();
            (Box::new(policy), count)
        }
        Algorithm::CqlBisim => {
            let out = train_representation(dataset, &alg.bisim, &InnerTrainer::Cql(alg.cql.clone()), seed)?;
            let count = out.aggregator.num_clusters();
            loss = out.series;
            aggregator = Some(out.aggregator);
            (Box::new(out.policy), count)
        }
    };

    let eval_seed = seed ^ EVAL_SALT;
    let episodes: Vec<Trajectory> = {
        use rayon::prelude::*;
        (0..config.evaluation.episodes)
            .into_par_iter()
            .map(|i| simulate(model, policy.as_ref(), &mut stream_rng(eval_seed, i as u64)))
            .collect()
    };
    let scores: Vec<f64> = episodes.iter().map(|t| env.score(t)).collect();
    let (mean_reward, reward_stderr) = mean_stderr(&scores);
    let (subopt, subopt_stderr) = match &reference.tree {
        Some(tree) => {
            let j = tree.expected_return(&tree.policy_table(policy.as_ref()));
            ((reference.optimal_return - j).max(0.0), 0.0)
        }
        None => {
            let returns: Vec<f64> = episodes.iter().map(Trajectory::total_reward).collect();
            let (mean, se) = mean_stderr(&returns);
            (reference.optimal_return - mean, se)
        }
    };
    Ok(RunOutput {
        row: RunRow {
            algorithm,
            n: dataset.len(),
            seed,
            mean_reward,
            reward_stderr,
            subopt,
            subopt_stderr,
            subopt_mode: reference.mode(),
            cluster_count,
            wall_time: start.elapsed().as_secs_f64(),
        },
        policy,
        loss,
        aggregator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ohmdp::evaluate_policy_exact;

    #[test]
    fn latent_bound_dominates_optimal_return() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..20 {
            let m = random_pomdp(3, 2, 2, 3, &mut rng);
            let opt = crate::ohmdp::optimal_values(&m).unwrap();
            assert!(latent_mdp_value(&m) >= opt.optimal_return - 1e-12);
        }
        let m = stitching::model();
        assert!((latent_mdp_value(&m) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pevi_on_empty_data_acts_uniformly() {
        let mut config = ExperimentConfig::scaling();
        config.evaluation.episodes = 2000;
        let env = Environment::build(&config, 4).unwrap();
        let reference = Reference::new(&env.model, &config.evaluation).unwrap();
        let data = generate(&config, &env, 0, 4).unwrap();
        let out = run_algorithm(&config, &env, &reference, &data, Algorithm::Pevi, 4).unwrap();
        let uniform = evaluate_policy_exact(&env.model, &UniformPolicy { num_actions: 2 }).unwrap();
        assert_eq!(out.row.subopt_mode, SubOptMode::Exact);
        assert!((out.row.subopt - (reference.optimal_return - uniform)).abs() < 1e-12);
        assert!((out.row.mean_reward - uniform).abs() < 4.0 * out.row.reward_stderr.max(1e-3));
    }
}
