//! Local all-pass (LAP) non-rigid registration in image space and k-space.
//!
//! The crate is organised bottom-up: grids and transforms, the filter basis,
//! the two registration back-ends, undersampling, synthetic data and metrics.

pub mod error;
pub mod filter_basis;
pub mod fourier;
pub mod grid;
pub mod interp;
pub mod io;
pub mod lap_image;
pub mod lap_kspace;
pub mod metrics;
pub mod sampling;
pub mod smoothing;
pub mod synthesis;

mod linalg;

pub use error::{Error, Result};
pub use grid::{CVolume, Dims, FlowField, Grid, KSpace, Volume};
