//! Integrable nonparametric flows.
//!
//! Given samples `x¹..xᴺ` of a density `p ∝ exp(ℓ)` and an infinitesimal change
//! `δℓ` to its log, reconstruct per-sample velocities `vⁱ` such that moving the
//! samples to `xⁱ + ε·vⁱ` yields (to first order) samples of `p + ε·δp`. The
//! field is chosen integrable, `v·p = ∇u`, which turns the continuity equation
//! `δp = −∇·(v p)` into a Poisson problem solved with the free-space Coulomb
//! kernel.
//!
//! Modules:
//!
//! - [`kernels`]: Green's functions, Coulomb potentials, RBF kernel derivatives.
//! - [`distributions`]: Gaussian-mixture test densities and mean perturbations.
//! - [`flow`]: the pairwise flow estimator, clipping, transport and the
//!   continuity-equation check.
//! - [`ksd`]: kernelized Stein discrepancy U-statistic.
//! - [`griddiag`]: 2-D grids, KDE, median filter.
//! - [`experiment`]: config-driven runs that write CSV/SVG/metrics artifacts.

pub mod distributions;
pub mod error;
pub mod experiment;
pub mod flow;
pub mod griddiag;
pub mod kernels;
pub mod ksd;
pub mod par;
pub mod points;

pub use distributions::{GaussianMixture, MixtureComponent, Perturbation, SampleSet};
pub use error::{Error, Result};
pub use flow::{FlowField, FlowOptions};
pub use griddiag::{GridSpec, ScalarGrid, VectorGrid};
pub use kernels::{Dim, RbfBandwidth};
pub use ksd::KsdResult;
pub use points::Points;
