//! Snapshot 3D localization of point sources imaged through a rotating PSF.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod fft;
pub mod flux;
pub mod io_store;
pub mod optics;
pub mod pipeline;
pub mod postproc;
pub mod scene;
pub mod solver;

pub use error::{Error, Result};
