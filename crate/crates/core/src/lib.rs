//! Geometry and scheduling core for camera-controlled video re-rendering:
//! hybrid dynamic/static warping, an accumulating world point cache, and
//! history-guided autoregressive denoising.

// `!(x > 0.0)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cache;
pub mod dataprep;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod scheduler;
pub mod seed;
pub mod warp;
