//! Desk-scale benchmark for tabular synthesizers.
//!
//! Simulated datasets come from parametric models (Gaussian mixtures and a
//! discrete Bayesian network). A synthesizer learns from samples of the
//! model; its output is scored by the true model (`L_syn`) and by a model
//! refitted on it and evaluated on held-out real samples (`L_test`).
//! Labelled tables are scored by machine-learning efficacy instead.

pub mod bayesnet;
pub mod error;
pub mod eval;
pub mod gmm;
pub mod leaderboard;
pub mod logreg;
pub mod parametric;
pub mod synth;

pub use error::{BenchError, Result};
pub use leaderboard::{render_table, run_leaderboard, BenchConfig, BenchmarkReport};
pub use parametric::ParametricModel;
pub use synth::Synthesizer;
