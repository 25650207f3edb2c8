//! Experiment runner for transductive active learning: GP experiments,
//! safe Bayesian optimization tasks, embedding retrieval and theory checks.

pub mod config;
pub mod embeddings;
pub mod error;
pub mod gp_exp;
pub mod output;
pub mod retrieve;
pub mod safe_bo;
pub mod stats;
pub mod theory_cmd;
pub mod workers;

pub use error::{Error, Result};
