//! Experiment harness, configuration and command line for `muon-lab`.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
