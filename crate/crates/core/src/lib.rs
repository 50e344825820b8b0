//! Numerical core for studying Muon and mini-batch SGD on matrix parameters
//! under Hölder-smooth objectives and heavy-tailed gradient noise.
//!
//! Everything here is `no_std` with `alloc`; IO, configuration and the
//! experiment harness live in the `muon-lab` crate.
#![no_std]
extern crate alloc;

pub mod bounds;
mod error;
pub mod linalg;
pub mod matrix;
pub mod noise;
pub mod objective;
pub mod optimizer;
pub mod rng;
pub mod schedule;

pub use error::Error;
pub use matrix::Matrix;
