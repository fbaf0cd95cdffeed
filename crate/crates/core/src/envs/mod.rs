//! Benchmark environments.

pub mod gridworld;
pub mod random;
pub mod wordle;
