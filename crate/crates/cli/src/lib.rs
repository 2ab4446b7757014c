//! Experiment runner for `neuroinfo`: trains replicate networks from a TOML
//! configuration, computes neuron measures, runs ablation sweeps and merges
//! the resulting CSV files.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;
