//! Grids over (algorithm, N, seed), aggregation and the statistics used by the reproductions.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::agents::eval::mean_stderr;
use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, ExperimentConfig};
use crate::harness::run::{generate, run_algorithm, Environment, Reference, RunOutput, RunRow};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepResult {
    /// Canonical order: algorithm (as requested), then N, then seed.
    pub rows: Vec<RunRow>,
}

/// Runs every `(algorithm, N, seed)` point of `config.sweep`, at most `workers` at a time.
///
/// All points sharing a seed share the instance, its reference solution and the
/// dataset stream, so smaller N are prefixes of larger ones.
pub fn run_grid(config: &ExperimentConfig, workers: usize) -> Result<Vec<RunOutput>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    let sweep = &config.sweep;
    let seeds: Vec<u64> = (0..sweep.seeds as u64).map(|i| config.seed + i).collect();
    let max_n = sweep.ns.iter().copied().max().unwrap_or(0);
    let per_seed: Vec<Vec<RunOutput>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let env = Environment::build(config, seed)?;
                let reference = Reference::new(&env.model, &config.evaluation)?;
                let full = generate(config, &env, max_n, seed)?;
                let mut out = Vec::new();
                for &alg in &sweep.algorithms {
                    for &n in &sweep.ns {
                        out.push(run_algorithm(config, &env, &reference, &full.truncated(n), alg, seed)?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()
    })?;
    // Reorder from seed-major to (algorithm, N, seed).
    let per_run = sweep.algorithms.len() * sweep.ns.len();
    let mut slots: Vec<Option<RunOutput>> = (0..per_run * seeds.len()).map(|_| None).collect();
    for (s, runs) in per_seed.into_iter().enumerate() {
        for (k, run) in runs.into_iter().enumerate() {
            slots[k * seeds.len() + s] = Some(run);
        }
    }
    Ok(slots.into_iter().map(|r| r.expect("every grid point ran")).collect())
}

impl SweepResult {
    pub fn from_runs(runs: &[RunOutput]) -> Self {
        SweepResult {
            rows: runs.iter().map(|r| r.row.clone()).collect(),
        }
    }

    /// Rows of one algorithm at one N, in seed order.
    pub fn select(&self, algorithm: Algorithm, n: usize) -> Vec<&RunRow> {
        self.rows.iter().filter(|r| r.algorithm == algorithm && r.n == n).collect()
    }
}

pub const CSV_HEADER: &str = "# histitch-csv v1";

/// Writes a versioned CSV: header comment, column names, rows.
pub fn format_csv(columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut out = format!("{CSV_HEADER}\n{}\n", columns.join(","));
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub const RUN_COLUMNS: [&str; 9] = [
    "algorithm",
    "n",
    "seed",
    "mean_reward",
    "reward_stderr",
    "subopt",
    "subopt_stderr",
    "subopt_mode",
    "cluster_count",
];

pub fn run_metrics_csv(rows: &[RunRow]) -> String {
    format_csv(
        &RUN_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.algorithm.name().to_string(),
                r.n.to_string(),
                r.seed.to_string(),
                r.mean_reward.to_string(),
                r.reward_stderr.to_string(),
                r.subopt.to_string(),
                r.subopt_stderr.to_string(),
                r.subopt_mode.name().to_string(),
                r.cluster_count.to_string(),
            ]
        }),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub algorithm: Algorithm,
    pub n: usize,
    pub runs: usize,
    pub mean_reward: f64,
    pub mean_reward_stderr: f64,
    pub subopt: f64,
    pub subopt_stderr: f64,
    pub cluster_count: f64,
}

/// Mean and standard error per `(algorithm, N)`; algorithms in first-seen order, N ascending.
pub fn aggregate(result: &SweepResult) -> Vec<PlotRow> {
    let mut groups: Vec<(Algorithm, usize)> = Vec::new();
    for r in &result.rows {
        if !groups.contains(&(r.algorithm, r.n)) {
            groups.push((r.algorithm, r.n));
        }
    }
    let order: Vec<Algorithm> = groups.iter().fold(Vec::new(), |mut acc, g| {
        if !acc.contains(&g.0) {
            acc.push(g.0);
        }
        acc
    });
    groups.sort_by_key(|&(a, n)| (order.iter().position(|&x| x == a), n));
    groups
        .into_iter()
        .map(|(algorithm, n)| {
            let rows = result.select(algorithm, n);
            let col = |f: fn(&RunRow) -> f64| mean_stderr(&rows.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (mean_reward, mean_reward_stderr) = col(|r| r.mean_reward);
            let (subopt, subopt_stderr) = col(|r| r.subopt);
            PlotRow {
                algorithm,
                n,
                runs: rows.len(),
                mean_reward,
                mean_reward_stderr,
                subopt,
                subopt_stderr,
                cluster_count: col(|r| r.cluster_count as f64).0,
            }
        })
        .collect()
}

pub const PLOT_COLUMNS: [&str; 8] = [
    "algorithm",
    "n",
    "runs",
    "mean_reward",
    "mean_reward_stderr",
    "subopt",
    "subopt_stderr",
    "cluster_count",
];

/// Plot data as CSV text with columns [`PLOT_COLUMNS`].
pub fn emit_plotdata(result: &SweepResult) -> String {
    format_csv(
        &PLOT_COLUMNS,
        aggregate(result).into_iter().map(|p| {
            vec![
                p.algorithm.name().to_string(),
                p.n.to_string(),
                p.runs.to_string(),
                p.mean_reward.to_string(),
                p.mean_reward_stderr.to_string(),
                p.subopt.to_string(),
                p.subopt_stderr.to_string(),
                p.cluster_count.to_string(),
            ]
        }),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedTest {
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) > 0`.
    pub p_value: f64,
}

/// Paired one-sided t-test of `a > b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::DegenerateInput("paired test needs two equal samples of size >= 2".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean_diff, se) = mean_stderr(&diffs);
    if se == 0.0 {
        let p_value = if mean_diff > 0.0 { 0.0 } else { 1.0 };
        let t = if mean_diff == 0.0 { 0.0 } else { mean_diff.signum() * f64::INFINITY };
        return Ok(PairedTest { mean_diff, t, p_value });
    }
    let t = mean_diff / se;
    let dist = StudentsT::new(0.0, 1.0, (diffs.len() - 1) as f64).expect("positive degrees of freedom");
    Ok(PairedTest {
        mean_diff,
        t,
        p_value: 1.0 - dist.cdf(t),
    })
}

/// Trailing moving averages of window `w` (one value per full window).
pub fn moving_average(series: &[f64], w: usize) -> Vec<f64> {
    if w == 0 || series.len() < w {
        return Vec::new();
    }
    series.windows(w).map(|x| x.iter().sum::<f64>() / w as f64).collect()
}

/// Number of strict increases of the `w`-window moving average.
pub fn moving_average_increases(series: &[f64], w: usize) -> usize {
    moving_average(series, w).windows(2).filter(|p| p[1] > p[0]).count()
}
