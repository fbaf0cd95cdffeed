//! The work behind each CLI subcommand. Every command returns the files it
//! wants written so callers (and tests) can inspect them before they hit disk.

use std::collections::BTreeMap;
use std::path::Path;

use crate::bisim::metric::{exact_bisim_metric, value_difference_check, DepthIndexedMetric, ValueDifferenceReport};
use crate::data::io::write_dataset;
use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, ExperimentConfig};
use crate::harness::run::{generate, run_algorithm, Environment, Reference, RunOutput};
use crate::harness::sweep::{
    aggregate, emit_plotdata, format_csv, moving_average_increases, paired_t_test, run_grid, run_metrics_csv, PairedTest,
    PlotRow, SweepResult,
};
use crate::ohmdp::{optimal_values, HistoryTree};
use crate::representation::cluster::{cluster, Aggregator};
use crate::representation::lemma2::{lemma2_check, Lemma2Report};
use crate::representation::mds::plant_metric;
use crate::representation::train::IterationStats;

/// Window of the loss-curve smoothing.
pub const LOSS_WINDOW: usize = 10;

/// Named output files, written in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
    /// Human-readable summary for stdout.
    pub summary: String,
    /// Per-run wall times, kept apart from the CSVs.
    pub timings: Vec<String>,
}

impl Outputs {
    fn add(&mut self, name: &str, text: String) {
        self.files.push((name.to_string(), text));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.0 == name).map(|f| f.1.as_str())
    }

    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), config.to_toml())?;
        for (name, text) in &self.files {
            std::fs::write(dir.join(name), text)?;
        }
        if !self.timings.is_empty() {
            std::fs::write(dir.join("timings.txt"), self.timings.join("\n") + "\n")?;
        }
        Ok(())
    }
}

fn timings(runs: &[RunOutput]) -> Vec<String> {
    runs.iter()
        .map(|r| format!("{} n={} seed={} seconds={:.3}", r.row.algorithm.name(), r.row.n, r.row.seed, r.row.wall_time))
        .collect()
}

pub const LOSS_COLUMNS: [&str; 9] = [
    "algorithm",
    "seed",
    "iteration",
    "loss",
    "eval_loss",
    "squared_form",
    "skipped",
    "cluster_count",
    "max_center_radius",
];

fn loss_rows<'a>(runs: impl IntoIterator<Item = &'a RunOutput>) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in runs {
        for s in &r.loss {
            rows.push(vec![
                r.row.algorithm.name().to_string(),
                r.row.seed.to_string(),
                s.iteration.to_string(),
                s.loss.to_string(),
                s.eval_loss.to_string(),
                s.squared_form.to_string(),
                s.skipped.to_string(),
                s.cluster_count.to_string(),
                s.max_center_radius.to_string(),
            ]);
        }
    }
    rows
}

/// Versioned JSON dump of an aggregator with members in key order.
pub fn aggregator_json(agg: &Aggregator) -> String {
    let assignment: BTreeMap<String, usize> = agg.assignment.iter().map(|(k, &z)| (k.to_string(), z)).collect();
    let value = serde_json::json!({
        "format": "histitch-aggregator",
        "version": 1,
        "epsilon": agg.epsilon,
        "depth_restricted": agg.depth_restricted,
        "centers": agg.centers,
        "center_keys": agg.center_keys.iter().map(|k| k.to_string()).collect::<Vec<_>>(),
        "center_depths": agg.center_depths,
        "assignment": assignment,
    });
    serde_json::to_string_pretty(&value).expect("aggregator serializes") + "\n"
}

pub fn gen_data(config: &ExperimentConfig) -> Result<Outputs> {
    config.validate()?;
    let env = Environment::build(config, config.seed)?;
    let data = generate(config, &env, config.dataset.n, config.seed)?;
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf)?;
    let mut out = Outputs::default();
    out.summary = format!(
        "{} trajectories, {} transitions, env {}",
        data.len(),
        data.num_transitions(),
        data.meta.env_hash
    );
    out.add("dataset.jsonl", String::from_utf8(buf).expect("dataset files are utf-8"));
    Ok(out)
}

/// One run of `algorithm.name` on one dataset.
pub fn solve(config: &ExperimentConfig) -> Result<(RunOutput, Outputs)> {
    config.validate()?;
    let env = Environment::build(config, config.seed)?;
    let reference = Reference::new(&env.model, &config.evaluation)?;
    let data = generate(config, &env, config.dataset.n, config.seed)?;
    let run = run_algorithm(config, &env, &reference, &data, config.algorithm.name, config.seed)?;
    let mut out = Outputs::default();
    out.add("run_metrics.csv", run_metrics_csv(std::slice::from_ref(&run.row)));
    if !run.loss.is_empty() {
        out.add("bisim_loss.csv", format_csv(&LOSS_COLUMNS, loss_rows([&run])));
    }
    if let Some(agg) = &run.aggregator {
        out.add("aggregator.json", aggregator_json(agg));
    }
    let r = &run.row;
    out.summary = format!(
        "{}: mean reward {:.4} +/- {:.4}, subopt {:.4} ({}), {} clusters",
        r.algorithm.name(),
        r.mean_reward,
        r.reward_stderr,
        r.subopt,
        r.subopt_mode.name(),
        r.cluster_count
    );
    out.timings = timings(std::slice::from_ref(&run));
    Ok((run, out))
}

pub fn sweep(config: &ExperimentConfig, workers: usize) -> Result<(SweepResult, Outputs)> {
    let runs = run_grid(config, workers)?;
    let result = SweepResult::from_runs(&runs);
    let mut out = Outputs::default();
    out.add("run_metrics.csv", run_metrics_csv(&result.rows));
    out.add("plotdata.csv", emit_plotdata(&result));
    let losses = loss_rows(&runs);
    if !losses.is_empty() {
        out.add("bisim_loss.csv", format_csv(&LOSS_COLUMNS, losses));
    }
    out.summary = format!("{} runs", result.rows.len());
    out.timings = timings(&runs);
    Ok((result, out))
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub metric: DepthIndexedMetric,
    pub lemma2: Lemma2Report,
    pub value_difference: ValueDifferenceReport,
}

/// Exact metric under `pi*`, the value-difference check, and the aggregation
/// bound for a metric-planted embedding clustered at `pevi_phi.epsilon`.
pub fn bisim_oracle(config: &ExperimentConfig) -> Result<(OracleReport, Outputs)> {
    config.validate()?;
    let env = Environment::build(config, config.seed)?;
    let model = &env.model;
    HistoryTree::build_with(model, model.horizon(), config.evaluation.size_cap)?;
    let opt = optimal_values(model)?;
    let metric = exact_bisim_metric(model, &opt.policy())?;
    let value_difference = value_difference_check(model, &metric, &opt.policy())?;
    let phi = plant_metric(&metric, config.algorithm.bisim.dim, true);
    let agg = cluster(&phi, config.algorithm.pevi_phi.epsilon, true);
    let lemma2 = lemma2_check(model, &agg, &phi, &metric)?;

    let mut out = Outputs::default();
    for depth in 1..=metric.layers.len() {
        let mut buf = Vec::new();
        metric.write_csv(depth, &mut buf)?;
        out.add(&format!("metric_depth{depth}.csv"), String::from_utf8(buf).expect("csv is utf-8"));
    }
    let l = &lemma2;
    out.add(
        "oracle_report.csv",
        format_csv(
            &[
                "histories",
                "clusters",
                "effective_epsilon",
                "metric_gap",
                "max_lhs",
                "rhs",
                "violations",
                "value_difference_pairs",
                "value_difference_violations",
            ],
            [vec![
                l.histories.to_string(),
                l.clusters.to_string(),
                l.effective_epsilon.to_string(),
                l.metric_gap.to_string(),
                l.max_lhs.to_string(),
                l.rhs.to_string(),
                l.violations.to_string(),
                value_difference.pairs_checked.to_string(),
                value_difference.violations.to_string(),
            ]],
        ),
    );
    out.add("aggregator.json", aggregator_json(&agg));
    out.summary = format!(
        "{} histories in {} clusters; aggregation bound: max lhs {:.3e} <= rhs {:.3e}, {} violations; value-difference: {} violations over {} pairs",
        l.histories, l.clusters, l.max_lhs, l.rhs, l.violations, value_difference.violations, value_difference.pairs_checked
    );
    Ok((
        OracleReport {
            metric,
            lemma2,
            value_difference,
        },
        out,
    ))
}

pub const GRIDWORLD_ROWS: [Algorithm; 3] = [Algorithm::FilteredBc, Algorithm::Cql, Algorithm::CqlBisim];

/// Filtered BC, CQL and CQL+bisim on one dataset size, `sweep.seeds` seeds.
pub fn repro_gridworld(config: &ExperimentConfig, workers: usize) -> Result<(Vec<PlotRow>, Outputs)> {
    let mut config = config.clone();
    config.sweep.algorithms = GRIDWORLD_ROWS.to_vec();
    config.sweep.ns = vec![config.dataset.n];
    let runs = run_grid(&config, workers)?;
    let result = SweepResult::from_runs(&runs);
    let table = aggregate(&result);
    let mut out = Outputs::default();
    out.add(
        "gridworld_table.csv",
        format_csv(
            &["algorithm", "runs", "mean_reward", "mean_reward_stderr"],
            table.iter().map(|p| {
                vec![
                    p.algorithm.name().to_string(),
                    p.runs.to_string(),
                    p.mean_reward.to_string(),
                    p.mean_reward_stderr.to_string(),
                ]
            }),
        ),
    );
    out.add("run_metrics.csv", run_metrics_csv(&result.rows));
    out.add("bisim_loss.csv", format_csv(&LOSS_COLUMNS, loss_rows(&runs)));
    out.summary = table
        .iter()
        .map(|p| format!("{:<12} {:.3} +/- {:.3}", p.algorithm.name(), p.mean_reward, p.mean_reward_stderr))
        .collect::<Vec<_>>()
        .join("\n");
    out.timings = timings(&runs);
    Ok((table, out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub result: SweepResult,
    /// Per N: mean SubOpt of naive PEVI, of PEVI+Phi, and the paired test of naive > aggregated.
    pub tests: Vec<(usize, f64, f64, PairedTest)>,
    /// Mean PEVI+Phi SubOpt at the largest N over that at the smallest.
    pub ratio: f64,
}

/// Naive PEVI against PEVI on the aggregated MDP over `sweep.ns`.
pub fn repro_scaling(config: &ExperimentConfig, workers: usize) -> Result<(ScalingReport, Outputs)> {
    let mut config = config.clone();
    config.sweep.algorithms = vec![Algorithm::Pevi, Algorithm::PeviPhi];
    let runs = run_grid(&config, workers)?;
    let result = SweepResult::from_runs(&runs);
    let mut ns = config.sweep.ns.clone();
    ns.sort_unstable();
    ns.dedup();
    let subopts = |alg, n| -> Vec<f64> { result.select(alg, n).iter().map(|r| r.subopt).collect() };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut tests = Vec::new();
    for &n in &ns {
        let (naive, phi) = (subopts(Algorithm::Pevi, n), subopts(Algorithm::PeviPhi, n));
        tests.push((n, mean(&naive), mean(&phi), paired_t_test(&naive, &phi)?));
    }
    let first = tests.first().ok_or_else(|| Error::Config("scaling needs at least one N".into()))?;
    let last = tests.last().expect("non-empty");
    let ratio = last.2 / first.2;

    let mut out = Outputs::default();
    out.add("run_metrics.csv", run_metrics_csv(&result.rows));
    out.add("scaling.csv", emit_plotdata(&result));
    out.add(
        "scaling_test.csv",
        format_csv(
            &["n", "pevi_subopt", "pevi_phi_subopt", "mean_diff", "t", "p_value"],
            tests.iter().map(|(n, a, b, t)| {
                vec![
                    n.to_string(),
                    a.to_string(),
                    b.to_string(),
                    t.mean_diff.to_string(),
                    t.t.to_string(),
                    t.p_value.to_string(),
                ]
            }),
        ),
    );
    out.summary = tests
        .iter()
        .map(|(n, a, b, t)| format!("N={n:<6} pevi {a:.4}  pevi+phi {b:.4}  t {:.2}  p {:.2e}", t.t, t.p_value))
        .chain(std::iter::once(format!("pevi+phi SubOpt ratio (largest N / smallest N): {ratio:.3}")))
        .collect::<Vec<_>>()
        .join("\n");
    out.timings = timings(&runs);
    Ok((
        ScalingReport {
            result,
            tests,
            ratio,
        },
        out,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossCurve {
    pub seed: u64,
    pub series: Vec<IterationStats>,
    /// Increases of the trailing moving average of the emitted loss.
    pub increases: usize,
}

/// CQL+bisim training curves, one per seed.
pub fn repro_losscurve(config: &ExperimentConfig, workers: usize) -> Result<(Vec<LossCurve>, Outputs)> {
    let mut config = config.clone();
    config.sweep.algorithms = vec![Algorithm::CqlBisim];
    config.sweep.ns = vec![config.dataset.n];
    let runs = run_grid(&config, workers)?;
    let curves: Vec<LossCurve> = runs
        .iter()
        .map(|r| {
            let loss: Vec<f64> = r.loss.iter().map(|s| s.loss).collect();
            LossCurve {
                seed: r.row.seed,
                series: r.loss.clone(),
                increases: moving_average_increases(&loss, LOSS_WINDOW),
            }
        })
        .collect();
    let mut out = Outputs::default();
    out.add("bisim_loss.csv", format_csv(&LOSS_COLUMNS, loss_rows(&runs)));
    out.add(
        "losscurve_summary.csv",
        format_csv(
            &["seed", "iterations", "window", "ma_increases", "non_increasing"],
            curves.iter().map(|c| {
                vec![
                    c.seed.to_string(),
                    c.series.len().to_string(),
                    LOSS_WINDOW.to_string(),
                    c.increases.to_string(),
                    (c.increases == 0).to_string(),
                ]
            }),
        ),
    );
    out.add("run_metrics.csv", run_metrics_csv(&SweepResult::from_runs(&runs).rows));
    let flat = curves.iter().filter(|c| c.increases == 0).count();
    out.summary = format!(
        "{flat}/{} runs have a non-increasing {LOSS_WINDOW}-iteration moving average of the loss",
        curves.len()
    );
    out.timings = timings(&runs);
    Ok((curves, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_counts_rows() {
        let mut c = ExperimentConfig::scaling();
        c.sweep.seeds = 20;
        c.evaluation.episodes = 5;
        let (result, out) = sweep(&c, 1).unwrap();
        assert_eq!(result.rows.len(), 120);
        assert_eq!(out.get("run_metrics.csv").unwrap().lines().count(), 122);
        assert_eq!(out.get("plotdata.csv").unwrap().lines().count(), 2 + 6);
    }

    #[test]
    fn oracle_on_stitching_reports_no_violations() {
        let (report, out) = bisim_oracle(&ExperimentConfig::stitching()).unwrap();
        assert_eq!(report.lemma2.violations, 0);
        assert_eq!(report.value_difference.violations, 0);
        assert!(out.get("metric_depth1.csv").unwrap().starts_with("# histitch-csv v1\n"));
    }
}
