//! Linear mixed models for longitudinal designs in which every observational
//! unit is measured once ("destructive" sampling) while the experimental units
//! that contain them persist across all times.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the numerical core:
//!
//! - [`data`]: long-format datasets and sum-to-zero design matrices,
//! - [`grouping`]: pseudo-observational units formed inside each experimental unit,
//! - [`simulate`]: the AR(1) panel generator and the destructive sampler,
//! - [`lmm`]: ML/REML fitting through the penalized least-squares system,
//! - [`models`]: the proposed model and its three baselines,
//! - [`anova`], [`manova`], [`diagnostics`]: inference and residual checks,
//! - [`experiments`]: the Monte Carlo comparison protocol.
//!
//! File formats, reports and the command line live in the `dlmm` crate.

#![no_std]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::too_many_arguments)]

extern crate alloc;

pub mod anova;
pub mod data;
pub mod diagnostics;
mod error;
pub mod experiments;
pub mod grouping;
mod linalg;
pub mod lmm;
pub mod manova;
pub mod models;
pub mod optimize;
pub mod rng;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};

pub use anova::{AnovaModel, AnovaRow, AnovaTable, Hypothesis};
pub use data::{DesignMatrices, Factor, LongDataset, Observation, RandomTerm, Term};
pub use grouping::{GroupingStrategy, PseudoUnitAssignment};
pub use lmm::{Criterion, FittedLmm, VarianceComponents};
pub use manova::{ManovaHypothesis, ManovaResponses, ManovaResult};
pub use simulate::SimulationConfig;
