//! Class interference analysis for small classifiers.
//!
//! The crate trains micro multilayer perceptrons with SGD and then asks how
//! pairs of classes get in each other's way:
//!
//! - [`cctm`]: the cross-class test matrix, whose `(c1, c2)` entry is the
//!   fraction of true-`c1` samples predicted as `c2`; its diagonal is
//!   per-class recall.
//! - [`interference`]: class gradients (ego directions), ego models,
//!   interference models `w* - (θ1·g1 + θ2·g2)` and loss surfaces sampled
//!   over a `[-σ, σ]²` grid.
//! - [`dancing`]: per-epoch training traces, dancing notes and a label-dance
//!   score for pairs of recall curves.
//!
//! Supporting modules: [`nn`] (the classifier), [`optim`] (SGD with
//! momentum, weight decay and cosine annealing), [`datagen`] (seeded
//! Gaussian mixtures and CSV IO) and [`cli`] (the `cim` command).
//!
//! Everything is `f64` and deterministic given a seed, independent of the
//! number of worker threads.

pub mod cctm;
pub mod cli;
pub mod dancing;
pub mod datagen;
pub mod error;
pub mod interference;
pub mod nn;
pub mod optim;

pub use cctm::{compute_cctm, mistake_rate, CctMatrix};
pub use datagen::{Dataset, DatasetSpec};
pub use error::{Error, Result};
pub use nn::{MlpModel, MlpSpec, ParamVector, Sample};
pub use optim::{OptimizerConfig, Schedule};
