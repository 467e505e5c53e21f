//! Random walk in random scenery.
//!
//! Lattice random walks `S`, their local times `ℓ_n`, i.i.d. sceneries `Y`,
//! and the accumulated scenery `Z_n = Σ_{k<n} Y(S_k)`. Beyond simulation the
//! crate carries the deterministic machinery that governs the deviation
//! probabilities of `Z_n / n`: grid solvers for the variational rate
//! constants and the principal eigenvalues that describe exponential
//! functionals of the local times.
//!
//! The crate is `no_std` (it needs `alloc`). IO, configuration, the CLI and
//! parallel replicate runners live in the `rwrs-lab` companion crate.
#![no_std]
// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod grid;
pub mod kernel;
pub mod lattice;
pub mod local_times;
pub mod math;
pub mod rng;
pub mod rwrs;
pub mod scenery;
pub mod spectral;
pub mod stats;
pub mod varsolve;

pub use error::{Error, Result};
pub use grid::{Boundary, Grid, GridFunction, Mollifier};
pub use kernel::{Covariance, StepKernel, TorusKernel};
pub use lattice::{Site, SiteMap};
pub use local_times::{LocalTimeField, ScaledLocalTimes};
pub use rwrs::{ScaleRegime, TailEstimate, TailMethod};
pub use scenery::{Cumulant, CutScenery, SceneryModel};
