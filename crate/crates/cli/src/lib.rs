//! Command-line front end: corpus generation, training, translation,
//! evaluation, the ablation harness and the gradient suite.

pub mod app;
pub mod commands;
pub mod config;
pub mod suite;
