//! Random convolutional networks acting on stacked vectors, the rotation group
//! SO(d) that acts on them, and Monte Carlo experiments that probe how the
//! concentration of Haar measure forces sign flips on rotation orbits.
//!
//! The crate is organised by role:
//!
//! - [`rotgroup`]: Haar sampling, the action on point clouds, plane rotations,
//!   spectral norms.
//! - [`convnet`]: 1-D convolutional layers, weight sampling, forward passes and
//!   the normalised feature map.
//! - [`kernelcalc`]: the arc-cosine dual activation and the compositional kernel
//!   recursion, plus empirical-kernel comparisons.
//! - [`advsearch`]: budgets, balance estimation, the orbit search for sign flips
//!   and the end-to-end trial drivers.
//! - [`isolab`]: concentration, blow-up, Sudakov and tail experiments.
//! - [`harness`]: configuration, reproducible runs, CSV/JSON output.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod advsearch;
pub mod convnet;
pub mod error;
pub mod harness;
pub mod isolab;
pub mod kernelcalc;
pub mod rotgroup;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
pub use rotgroup::{PlaneRotation, PointCloud, RotationMatrix};
pub use stream::{derive_stream, Stream};
