//! Optimizers and experiment tooling for studying how batch size interacts
//! with optimizer hyperparameters.
//!
//! The crate is organised bottom-up:
//!
//! - [`halflife`]: decay rates expressed as token half-lives, and the rule
//!   for rescaling `beta2` when the batch size changes.
//! - [`tensor`]: named parameter and gradient sets.
//! - [`optim`]: SGD, Adam/AdamW, Adafactor and Muon behind one step interface.
//! - [`accumulation`]: micro-batch gradient accumulation.
//! - [`memory`]: parameter counting and the training memory floor.
//! - [`models`]: PRNG streams, the noisy quadratic toy, a synthetic Markov
//!   next-token task and a small MLP language model with manual backprop.
//! - [`harness`]: fixed-token-budget training, sweeps, sensitivity curves,
//!   the toy momentum experiment, CSV/SVG output.
//! - [`cli`]: the `smallbatch` command line.

pub mod accumulation;
pub mod cli;
pub mod error;
pub mod halflife;
pub mod harness;
pub mod memory;
pub mod models;
pub mod optim;
pub mod tensor;
pub mod units;

pub use error::{Error, Result};
