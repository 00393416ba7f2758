//! Spectral operator learning with boundary-condition-exact polynomial bases.
//!
//! The crate bundles:
//! - fast Chebyshev transforms on Chebyshev–Gauss–Lobatto grids
//!   ([`chebyshev`]);
//! - compact (Shen-type) bases that satisfy Dirichlet/Neumann/Robin boundary
//!   conditions identically, with forward/backward/fast compacting
//!   transforms ([`compacting`]);
//! - the OPNO network with banded spectral kernel layers, a projection head
//!   that is boundary-exact for any parameters, and handwritten reverse-mode
//!   gradients ([`model`]);
//! - an Adam training harness ([`train`]);
//! - Gaussian-random-field initial conditions and a Chebyshev reference
//!   solver for 1D viscous Burgers flow ([`grf`], [`burgers`], [`dataset`]);
//! - benchmark metrics and multi-resolution evaluation ([`evaluate`]);
//! - a binary container format for datasets, checkpoints and reports
//!   ([`container`]) and the `opno` command-line interface ([`cli`]).

pub mod burgers;
pub mod chebyshev;
pub mod cli;
pub mod compacting;
pub mod container;
pub mod dataset;
pub mod error;
pub mod evaluate;
mod fft;
pub mod grf;
pub mod model;
pub mod plot;
pub mod train;

pub use error::{Error, Result};
