//! Mini-Wordle over a small vocabulary.
//!
//! Latent state is `(hidden word, last guess)`, with "no guess yet" as an extra
//! guess slot. A correct guess makes the state absorbing. The observation is the
//! colour feedback for the last guess, encoded in base 3 with the first letter as
//! the most significant digit; the extra code `3^L` marks the start.
//!
//! Internally a correct guess pays 1 and anything else pays 0. [`score`] converts
//! an episode to the conventional -1 per incorrect guess.

use std::path::Path;

use crate::error::{Error, Result};
use crate::pomdp::{RewardNoise, TabularPOMDP};
use crate::sim::Trajectory;

pub const BLACK: u8 = 0;
pub const YELLOW: u8 = 1;
pub const GREEN: u8 = 2;

/// Colours for `guess` against `word`: greens first, then yellows that consume
/// the remaining letter counts left to right.
pub fn feedback(word: &[u8], guess: &[u8]) -> Vec<u8> {
    let mut out = vec![BLACK; guess.len()];
    let mut remaining = [0u32; 256];
    for (i, (&w, &g)) in word.iter().zip(guess).enumerate() {
        if w == g {
            out[i] = GREEN;
        } else {
            remaining[w as usize] += 1;
        }
    }
    for (i, &g) in guess.iter().enumerate() {
        if out[i] != GREEN && remaining[g as usize] > 0 {
            remaining[g as usize] -= 1;
            out[i] = YELLOW;
        }
    }
    out
}

pub fn encode_feedback(colours: &[u8]) -> usize {
    colours.iter().fold(0, |acc, &c| acc * 3 + c as usize)
}

pub fn decode_feedback(mut code: usize, word_length: usize) -> Vec<u8> {
    let mut out = vec![0; word_length];
    for slot in out.iter_mut().rev() {
        *slot = (code % 3) as u8;
        code /= 3;
    }
    out
}

pub fn all_green(word_length: usize) -> usize {
    3usize.pow(word_length as u32) - 1
}

#[derive(Clone, Debug)]
pub struct MiniWordle {
    pub vocabulary: Vec<String>,
    pub word_length: usize,
    pub max_guesses: usize,
    pub model: TabularPOMDP,
}

impl MiniWordle {
    pub fn start_observation(&self) -> usize {
        3usize.pow(self.word_length as u32)
    }

    pub fn state_index(&self, word: usize, last_guess: Option<usize>) -> usize {
        word * (self.vocabulary.len() + 1) + last_guess.map_or(0, |g| g + 1)
    }
}

pub fn validate_vocabulary(vocabulary: &[String], word_length: usize) -> Result<()> {
    if vocabulary.is_empty() {
        return Err(Error::Vocabulary("vocabulary is empty".into()));
    }
    if word_length == 0 {
        return Err(Error::Vocabulary("word length must be positive".into()));
    }
    for (i, w) in vocabulary.iter().enumerate() {
        if w.len() != word_length {
            return Err(Error::Vocabulary(format!(
                "word {i} ({w:?}) has length {}, expected {word_length}",
                w.len()
            )));
        }
        if !w.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(Error::Vocabulary(format!("word {i} ({w:?}) is not lowercase a-z")));
        }
        if vocabulary[..i].contains(w) {
            return Err(Error::Vocabulary(format!("word {w:?} appears twice")));
        }
    }
    Ok(())
}

pub fn load_vocabulary(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn make_mini_wordle(vocabulary: &[String], word_length: usize, max_guesses: usize) -> Result<MiniWordle> {
    validate_vocabulary(vocabulary, word_length)?;
    if max_guesses == 0 {
        return Err(Error::Vocabulary("max_guesses must be positive".into()));
    }
    let v = vocabulary.len();
    let slots = v + 1;
    let ns = v * slots;
    let no = 3usize.pow(word_length as u32) + 1;
    let start_obs = no - 1;
    let mut transition = vec![0.0; ns * v * ns];
    let mut reward = vec![0.0; ns * v];
    let mut emission = vec![0.0; ns * no];
    let mut initial = vec![0.0; ns];
    for w in 0..v {
        initial[w * slots] = 1.0 / v as f64;
        for slot in 0..slots {
            let s = w * slots + slot;
            let solved = slot == w + 1;
            let obs = if slot == 0 {
                start_obs
            } else {
                encode_feedback(&feedback(vocabulary[w].as_bytes(), vocabulary[slot - 1].as_bytes()))
            };
            emission[s * no + obs] = 1.0;
            for a in 0..v {
                let next = if solved { s } else { w * slots + a + 1 };
                transition[(s * v + a) * ns + next] = 1.0;
                if !solved && a == w {
                    reward[s * v + a] = 1.0;
                }
            }
        }
    }
    // Uniform prior must sum to exactly one for the row check.
    let fix = 1.0 - initial.iter().sum::<f64>();
    initial[0] += fix;
    let model = TabularPOMDP::new(
        ns,
        v,
        no,
        transition,
        reward,
        emission,
        initial,
        max_guesses,
        RewardNoise::Deterministic,
    )?;
    Ok(MiniWordle {
        vocabulary: vocabulary.to_vec(),
        word_length,
        max_guesses,
        model,
    })
}

/// Number of guesses made up to and including the first correct one (or all of them).
pub fn episode_length(traj: &Trajectory) -> usize {
    traj.steps
        .iter()
        .position(|s| s.reward > 0.0)
        .map_or(traj.steps.len(), |i| i + 1)
}

/// Episode score under the -1-per-incorrect-guess, 0-for-correct convention.
pub fn score(traj: &Trajectory) -> f64 {
    let len = episode_length(traj);
    let solved = traj.steps.iter().any(|s| s.reward > 0.0);
    -((len - solved as usize) as f64)
}
