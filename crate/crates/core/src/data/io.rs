//! Line-delimited JSON dataset files.
//!
//! Line 1 is a header: `{"v":1,"env_hash":..,"seed":..,"num_trajectories":..,...}`.
//! Each following line is one trajectory:
//! `{"v":1,"seed":..,"policy":"..","o1":..,"steps":[[action,reward,next_obs],...],"terminal":true}`.
//! Histories are implicit: a step's history is `o1` followed by the earlier steps.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, DatasetMeta, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::sim::{Step, Trajectory};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    v: u32,
    #[serde(flatten)]
    meta: DatasetMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    v: u32,
    seed: u64,
    policy: String,
    o1: usize,
    steps: Vec<(usize, f64, usize)>,
    terminal: bool,
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let header = HeaderLine {
        v: FORMAT_VERSION,
        meta: dataset.meta.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for r in &dataset.records {
        let line = RecordLine {
            v: FORMAT_VERSION,
            seed: r.seed,
            policy: r.policy_id.clone(),
            o1: r.trajectory.initial_observation,
            steps: r
                .trajectory
                .steps
                .iter()
                .map(|s| (s.action, s.reward, s.next_observation))
                .collect(),
            terminal: r.trajectory.terminal,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("record serializes"))?;
    }
    Ok(())
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn format_err(record: usize, message: impl Into<String>) -> Error {
    Error::Format {
        record,
        message: message.into(),
    }
}

/// Parses a dataset; `record` in errors is the 1-based line number.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines();
    let header_text = lines.next().ok_or_else(|| format_err(1, "missing header line"))??;
    let header: HeaderLine = serde_json::from_str(&header_text).map_err(|e| format_err(1, e.to_string()))?;
    if header.v != FORMAT_VERSION {
        return Err(format_err(1, format!("unsupported version {}", header.v)));
    }
    let meta = header.meta;
    let mut records = Vec::with_capacity(meta.num_trajectories);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let text = line?;
        let rec: RecordLine = serde_json::from_str(&text).map_err(|e| format_err(line_no, e.to_string()))?;
        if rec.v != FORMAT_VERSION {
            return Err(format_err(line_no, format!("unsupported version {}", rec.v)));
        }
        if rec.steps.len() > meta.horizon {
            return Err(format_err(line_no, "trajectory longer than the horizon"));
        }
        let in_range = rec.o1 < meta.num_observations
            && rec
                .steps
                .iter()
                .all(|&(a, r, o)| a < meta.num_actions && o < meta.num_observations && (0.0..=1.0).contains(&r));
        if !in_range {
            return Err(format_err(line_no, "action, observation or reward out of range"));
        }
        records.push(TrajectoryRecord {
            seed: rec.seed,
            policy_id: rec.policy,
            trajectory: Trajectory {
                initial_observation: rec.o1,
                steps: rec
                    .steps
                    .into_iter()
                    .map(|(action, reward, next_observation)| Step {
                        action,
                        reward,
                        next_observation,
                    })
                    .collect(),
                terminal: rec.terminal,
            },
        });
    }
    if records.len() != meta.num_trajectories {
        return Err(format_err(
            records.len() + 2,
            format!("header promises {} trajectories, found {}", meta.num_trajectories, records.len()),
        ));
    }
    Ok(Dataset { meta, records })
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::generate_dataset;
    use crate::data::mixture::MixtureSpec;
    use crate::envs::random::random_pomdp;
    use crate::pomdp::RewardNoise;
    use crate::sim::stream_rng;

    fn sample() -> Dataset {
        let m = random_pomdp(3, 2, 3, 4, &mut stream_rng(1, 0)).with_reward_noise(RewardNoise::Bernoulli);
        generate_dataset(&m, &MixtureSpec::uniform_random(2), 25, 3)
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let d = sample();
        let mut a = Vec::new();
        write_dataset(&d, &mut a).unwrap();
        let back = read_dataset(a.as_slice()).unwrap();
        assert_eq!(back, d);
        let mut b = Vec::new();
        write_dataset(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fractional_rewards_roundtrip() {
        let m = random_pomdp(3, 2, 3, 4, &mut stream_rng(1, 0));
        let d = generate_dataset(&m, &MixtureSpec::uniform_random(2), 10, 3);
        let mut a = Vec::new();
        write_dataset(&d, &mut a).unwrap();
        assert_eq!(read_dataset(a.as_slice()).unwrap(), d);
    }

    #[test]
    fn truncated_file_reports_line() {
        let d = sample();
        let mut a = Vec::new();
        write_dataset(&d, &mut a).unwrap();
        let text = String::from_utf8(a).unwrap();
        // Cut the fourth line in half.
        let cut: usize = text.lines().take(3).map(|l| l.len() + 1).sum::<usize>() + 10;
        match read_dataset(&text.as_bytes()[..cut]) {
            Err(Error::Format { record, .. }) => assert_eq!(record, 4),
            other => panic!("unexpected {other:?}"),
        }
        // Dropping whole lines is caught by the header count.
        let short: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_dataset(short.as_bytes()), Err(Error::Format { record: 6, .. })));
    }

    #[test]
    fn missing_version_rejected() {
        let d = sample();
        let mut a = Vec::new();
        write_dataset(&d, &mut a).unwrap();
        let text = String::from_utf8(a).unwrap().replacen("\"v\":1,", "", 2);
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Format { record: 1, .. })));
    }
}
