//! Experiment configuration: a TOML file with one section per concern.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::cql::CqlConfig;
use crate::error::{Error, Result};
use crate::ohmdp::DEFAULT_SIZE_CAP;
use crate::pevi::SolveMode;
use crate::representation::train::{EncoderKind, RepresentationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "pevi")]
    Pevi,
    #[serde(rename = "pevi+phi")]
    PeviPhi,
    #[serde(rename = "cql")]
    Cql,
    #[serde(rename = "filtered-bc")]
    FilteredBc,
    #[serde(rename = "cql+bisim")]
    CqlBisim,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pevi => "pevi",
            Algorithm::PeviPhi => "pevi+phi",
            Algorithm::Cql => "cql",
            Algorithm::FilteredBc => "filtered-bc",
            Algorithm::CqlBisim => "cql+bisim",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pevi" => Algorithm::Pevi,
            "pevi+phi" => Algorithm::PeviPhi,
            "cql" => Algorithm::Cql,
            "filtered-bc" => Algorithm::FilteredBc,
            "cql+bisim" => Algorithm::CqlBisim,
            _ => return Err(Error::Config(format!("unknown algorithm {s:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Gridworld,
    Wordle,
    /// Latent dynamics observed with a fresh noise bit; see `envs::random::nuisance`.
    Nuisance,
    Stitching,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    /// Gridworld layout file.
    pub layout: Option<PathBuf>,
    /// Wordle word list.
    pub vocabulary: Option<PathBuf>,
    pub word_length: usize,
    pub max_guesses: usize,
    /// Size of generated instances (nuisance and random kinds).
    pub states: usize,
    pub actions: usize,
    pub observations: usize,
    pub horizon: usize,
    /// Seed of generated instances; the run seed when unset.
    pub instance_seed: Option<u64>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec {
            kind: EnvKind::Gridworld,
            layout: None,
            vocabulary: None,
            word_length: 3,
            max_guesses: 6,
            states: 3,
            actions: 2,
            observations: 2,
            horizon: 3,
            instance_seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MixtureKind {
    Uniform,
    /// Uniform play mixed with a scripted walk to the unsafe goal.
    GridworldUnsafe,
    /// The fixed behavior of the stitching instance.
    StitchingBehavior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Load this dataset file instead of generating one; its environment must match.
    pub path: Option<PathBuf>,
    /// Number of trajectories.
    pub n: usize,
    pub mixture: MixtureKind,
    /// Weight of the scripted component of `gridworld-unsafe`.
    pub unsafe_weight: f64,
    /// Probability that the scripted walker acts uniformly.
    pub scripted_noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            path: None,
            n: 5000,
            mixture: MixtureKind::GridworldUnsafe,
            unsafe_weight: 0.5,
            scripted_noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeviParams {
    /// Overrides the default log factor.
    pub iota: Option<f64>,
    pub mode: SolveMode,
}

impl Default for PeviParams {
    fn default() -> Self {
        PeviParams {
            iota: None,
            mode: SolveMode::Backward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregatorSource {
    /// Exact metric under the optimal policy, clustered directly.
    Oracle,
    /// Learned by the representation loop with a PEVI inner solver.
    Learned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeviPhiParams {
    pub aggregator: AggregatorSource,
    /// Radius for the oracle aggregator.
    pub epsilon: f64,
}

impl Default for PeviPhiParams {
    fn default() -> Self {
        PeviPhiParams {
            aggregator: AggregatorSource::Oracle,
            epsilon: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilteredBcParams {
    pub keep_fraction: f64,
}

impl Default for FilteredBcParams {
    fn default() -> Self {
        FilteredBcParams { keep_fraction: 0.25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub name: Algorithm,
    pub pevi: PeviParams,
    pub pevi_phi: PeviPhiParams,
    pub cql: CqlConfig,
    pub filtered_bc: FilteredBcParams,
    pub bisim: RepresentationConfig,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        AlgorithmSpec {
            name: Algorithm::CqlBisim,
            pevi: PeviParams::default(),
            pevi_phi: PeviPhiParams::default(),
            cql: CqlConfig::default(),
            filtered_bc: FilteredBcParams::default(),
            bisim: gridworld_bisim(),
        }
    }
}

fn gridworld_bisim() -> RepresentationConfig {
    RepresentationConfig {
        encoder: EncoderKind::Features,
        init_scale: 1.0,
        visited_init_scale: 0.01,
        epsilon: 0.1,
        depth_restricted: false,
        ..RepresentationConfig::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSpec {
    pub episodes: usize,
    /// Evaluate exactly on the history tree when it fits under `size_cap`.
    pub exact: bool,
    pub size_cap: usize,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            episodes: 100,
            exact: false,
            size_cap: DEFAULT_SIZE_CAP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    /// Seeds `seed, seed + 1, ...`.
    pub seeds: usize,
    pub algorithms: Vec<Algorithm>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            ns: vec![5000],
            seeds: 10,
            algorithms: vec![Algorithm::FilteredBc, Algorithm::Cql, Algorithm::CqlBisim],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub environment: EnvironmentSpec,
    pub dataset: DatasetSpec,
    pub algorithm: AlgorithmSpec,
    pub evaluation: EvaluationSpec,
    pub sweep: SweepSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::gridworld()
    }
}

impl ExperimentConfig {
    /// The gridworld profile: shipped layout and the reference hyperparameters.
    pub fn gridworld() -> Self {
        ExperimentConfig {
            seed: 0,
            output: PathBuf::from("runs"),
            environment: EnvironmentSpec {
                layout: Some(PathBuf::from("layouts/paper_fig1.grid")),
                ..EnvironmentSpec::default()
            },
            dataset: DatasetSpec::default(),
            algorithm: AlgorithmSpec::default(),
            evaluation: EvaluationSpec::default(),
            sweep: SweepSpec::default(),
        }
    }

    /// Naive PEVI against PEVI on the exact-metric aggregation, over dataset sizes.
    pub fn scaling() -> Self {
        ExperimentConfig {
            environment: EnvironmentSpec {
                kind: EnvKind::Nuisance,
                ..EnvironmentSpec::default()
            },
            dataset: DatasetSpec {
                n: 1000,
                mixture: MixtureKind::Uniform,
                ..DatasetSpec::default()
            },
            algorithm: AlgorithmSpec {
                name: Algorithm::PeviPhi,
                pevi: PeviParams {
                    iota: Some(1.0),
                    mode: SolveMode::Backward,
                },
                ..AlgorithmSpec::default()
            },
            evaluation: EvaluationSpec {
                exact: true,
                ..EvaluationSpec::default()
            },
            sweep: SweepSpec {
                ns: vec![250, 1000, 4000],
                seeds: 20,
                algorithms: vec![Algorithm::Pevi, Algorithm::PeviPhi],
            },
            ..ExperimentConfig::gridworld()
        }
    }

    /// Small mini-Wordle with uniformly random guessing data.
    pub fn wordle() -> Self {
        ExperimentConfig {
            environment: EnvironmentSpec {
                kind: EnvKind::Wordle,
                vocabulary: Some(PathBuf::from("vocab/mini3.txt")),
                ..EnvironmentSpec::default()
            },
            dataset: DatasetSpec {
                n: 2000,
                mixture: MixtureKind::Uniform,
                ..DatasetSpec::default()
            },
            algorithm: AlgorithmSpec {
                name: Algorithm::Cql,
                ..AlgorithmSpec::default()
            },
            sweep: SweepSpec {
                ns: vec![2000],
                seeds: 3,
                algorithms: vec![Algorithm::FilteredBc, Algorithm::Cql],
            },
            ..ExperimentConfig::gridworld()
        }
    }

    /// The three-step stitching instance with its prefix/suffix behavior.
    pub fn stitching() -> Self {
        ExperimentConfig {
            environment: EnvironmentSpec {
                kind: EnvKind::Stitching,
                ..EnvironmentSpec::default()
            },
            dataset: DatasetSpec {
                n: 200,
                mixture: MixtureKind::StitchingBehavior,
                ..DatasetSpec::default()
            },
            algorithm: AlgorithmSpec {
                name: Algorithm::PeviPhi,
                pevi: PeviParams {
                    iota: Some(1.0),
                    mode: SolveMode::Backward,
                },
                ..AlgorithmSpec::default()
            },
            evaluation: EvaluationSpec {
                exact: true,
                ..EvaluationSpec::default()
            },
            sweep: SweepSpec {
                ns: vec![200],
                seeds: 5,
                algorithms: vec![Algorithm::Pevi, Algorithm::PeviPhi],
            },
            ..ExperimentConfig::gridworld()
        }
    }

    /// CQL+bisim training curves on the gridworld profile over 20 seeds.
    pub fn losscurve() -> Self {
        ExperimentConfig {
            sweep: SweepSpec {
                ns: vec![5000],
                seeds: 20,
                algorithms: vec![Algorithm::CqlBisim],
            },
            ..ExperimentConfig::gridworld()
        }
    }

    /// Small random instances for the exact metric and aggregation checks.
    pub fn oracle() -> Self {
        ExperimentConfig {
            environment: EnvironmentSpec {
                kind: EnvKind::Random,
                ..EnvironmentSpec::default()
            },
            dataset: DatasetSpec {
                n: 500,
                mixture: MixtureKind::Uniform,
                ..DatasetSpec::default()
            },
            algorithm: AlgorithmSpec {
                name: Algorithm::PeviPhi,
                pevi_phi: PeviPhiParams {
                    aggregator: AggregatorSource::Oracle,
                    epsilon: 0.1,
                },
                ..AlgorithmSpec::default()
            },
            evaluation: EvaluationSpec {
                exact: true,
                ..EvaluationSpec::default()
            },
            sweep: SweepSpec {
                ns: vec![500],
                seeds: 5,
                algorithms: vec![Algorithm::Pevi, Algorithm::PeviPhi],
            },
            ..ExperimentConfig::gridworld()
        }
    }

    pub const PROFILES: [&'static str; 6] = ["gridworld", "losscurve", "scaling", "wordle", "stitching", "oracle"];

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "gridworld" => Ok(ExperimentConfig::gridworld()),
            "losscurve" => Ok(ExperimentConfig::losscurve()),
            "oracle" => Ok(ExperimentConfig::oracle()),
            "scaling" => Ok(ExperimentConfig::scaling()),
            "wordle" => Ok(ExperimentConfig::wordle()),
            "stitching" => Ok(ExperimentConfig::stitching()),
            _ => Err(Error::Config(format!("unknown profile {name:?}"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let paths = [
            &mut config.environment.layout,
            &mut config.environment.vocabulary,
            &mut config.dataset.path,
        ];
        for p in paths.into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let env = &self.environment;
        if let Some(p) = &self.dataset.path {
            require_file(Some(p), "dataset.path")?;
        }
        match env.kind {
            EnvKind::Gridworld => require_file(env.layout.as_deref(), "environment.layout")?,
            EnvKind::Wordle => {
                require_file(env.vocabulary.as_deref(), "environment.vocabulary")?;
                if env.max_guesses == 0 || env.word_length == 0 {
                    return Err(Error::Config("wordle needs positive word_length and max_guesses".into()));
                }
            }
            EnvKind::Nuisance | EnvKind::Random => {
                if env.states == 0 || env.actions == 0 || env.horizon == 0 || env.observations == 0 {
                    return Err(Error::Config("generated instances need positive sizes".into()));
                }
            }
            EnvKind::Stitching => {}
        }
        match (self.dataset.mixture, env.kind) {
            (MixtureKind::GridworldUnsafe, k) if k != EnvKind::Gridworld => {
                return Err(Error::Config("gridworld-unsafe mixture needs the gridworld environment".into()))
            }
            (MixtureKind::StitchingBehavior, k) if k != EnvKind::Stitching => {
                return Err(Error::Config("stitching-behavior mixture needs the stitching environment".into()))
            }
            _ => {}
        }
        for w in [self.dataset.unsafe_weight, self.dataset.scripted_noise] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("mixture probabilities must be in [0, 1], got {w}")));
            }
        }
        let alg = &self.algorithm;
        if let Some(iota) = alg.pevi.iota {
            if !(iota > 0.0 && iota.is_finite()) {
                return Err(Error::Config(format!("iota must be positive, got {iota}")));
            }
        }
        if !(alg.pevi_phi.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", alg.pevi_phi.epsilon)));
        }
        let keep = alg.filtered_bc.keep_fraction;
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(Error::Config(format!("keep fraction must be in (0, 1], got {keep}")));
        }
        alg.cql.validate()?;
        alg.bisim.validate()?;
        if self.evaluation.episodes == 0 {
            return Err(Error::Config("evaluation needs at least one episode".into()));
        }
        if self.sweep.seeds == 0 || self.sweep.ns.is_empty() || self.sweep.algorithms.is_empty() {
            return Err(Error::Config("sweep needs seeds, sizes and algorithms".into()));
        }
        Ok(())
    }
}

fn require_file(path: Option<&Path>, field: &str) -> Result<()> {
    match path {
        Some(p) if p.is_file() => Ok(()),
        Some(p) => Err(Error::Config(format!("{field}: {} does not exist", p.display()))),
        None => Err(Error::Config(format!("{field} is required"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gridworld_defaults_match_reference_table() {
        let c = ExperimentConfig::gridworld();
        assert_eq!(c.algorithm.cql.alpha, 0.1);
        assert_eq!(c.algorithm.bisim.eta, 0.05);
        assert_eq!(c.algorithm.cql.discount, 0.99);
        assert_eq!(c.algorithm.cql.batch_size, 32);
        assert_eq!(c.algorithm.bisim.batch_size, 32);
        assert_eq!(c.algorithm.cql.updates_per_iter, 200);
        assert_eq!(c.algorithm.bisim.updates_per_iter, 200);
        assert_eq!(c.algorithm.cql.iterations, 100);
        assert_eq!(c.algorithm.bisim.iterations, 100);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        for name in ExperimentConfig::PROFILES {
            let c = ExperimentConfig::profile(name).unwrap();
            assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
        let c = ExperimentConfig::from_toml("seed = 7\n[algorithm]\nname = \"pevi\"\n[algorithm.cql]\nalpha = 2.0\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.algorithm.name, Algorithm::Pevi);
        assert_eq!(c.algorithm.cql.alpha, 2.0);
        assert_eq!(c.algorithm.cql.batch_size, 32);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("sede = 1"), Err(Error::Config(_))));
        let mut c = ExperimentConfig::scaling();
        c.algorithm.pevi.iota = Some(-1.0);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ExperimentConfig::gridworld();
        c.environment.layout = Some(PathBuf::from("/nonexistent.grid"));
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
