//! Fairness-constrained Stackelberg equilibria for strategic classification
//! with causal feature graphs and peer-learned rules.

pub mod agent;
pub mod bounds;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fairness;
pub mod linalg;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod solvers;

pub use error::{Error, Result};
