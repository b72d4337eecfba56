//! Deep ensembles on a fixed parameter budget.
//!
//! A memory split `E(N, B/N)` spends a total budget of `B` parameters on `N`
//! independently trained networks, each scaled in width so that it holds
//! roughly `B/N` parameters. This crate counts parameters for several
//! width-parameterized architecture families, trains desk-scale MLP members,
//! averages and calibrates their predictions, sweeps `N` under a fixed budget
//! and reports the optimal split.

pub mod archspace;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod ensemble;
pub mod error;
pub mod hypertune;
pub mod plotgen;
pub mod seed;
pub mod splitsweep;
pub mod store;
pub mod tinytrain;

pub use error::{Error, Result};
