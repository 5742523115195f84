//! Quantifying the generalizability of experimental studies.
//!
//! Study results are modelled as draws from a distribution over rankings
//! (or raw score vectors). Two samples of results are compared with the
//! biased maximum mean discrepancy under a kernel that encodes the research
//! question, and the number of experiments needed for a study to be
//! (α*, δ*)-generalizable is estimated from the power law linking the sample
//! size to the quantiles of the MMD.
//!
//! Module map:
//! - [`ranking`]: rankings with ties and the statistics kernels consume.
//! - [`kernel`]: Borda, Jaccard, Mallows and RBF kernels, Gram matrices, δ* → ε*.
//! - [`mmd`]: MMD between samples, its resampled distribution, generalizability.
//! - [`powerlaw`]: quantile-curve fitting, n* prediction, closed-form quantiles.
//! - [`workflow`]: the sequential planning loop and one-shot assessment.
//! - [`synthetic`]: explicit distributions over rankings and the accuracy experiment.
//! - [`sigtest`]: Friedman and Conover–Iman tests.
//! - [`studyio`]: long-format CSV ingestion and report emission.

#![forbid(unsafe_code)]

mod error;
pub mod kernel;
pub mod linalg;
pub mod mmd;
pub mod powerlaw;
pub mod ranking;
pub mod rng;
pub mod sigtest;
pub mod studyio;
pub mod synthetic;
pub mod workflow;

pub use error::{Error, Result};
pub use kernel::{KernelBounds, KernelFamily, KernelSpec, Observation};
pub use mmd::{EmpiricalSample, MmdSample, SamplingMode};
pub use powerlaw::{FitMode, MmdQuantileCurve, PowerLawFit};
pub use ranking::{AlternativeSet, Ranking};
pub use synthetic::DiscreteDistribution;
pub use workflow::GenRequirement;
