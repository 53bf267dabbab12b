//! Camera models, rigid and similarity transforms, projection, Plücker ray
//! embeddings and similarity fitting.
//!
//! Extrinsics are world-to-camera. Camera axes are +x right, +y down,
//! +z forward. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)` so rays are cast
//! through `(u + 0.5, v + 0.5)` and projected points land in pixel
//! `(⌊u⌋, ⌊v⌋)`.

mod camera;
mod plucker;
mod umeyama;

pub use camera::{
    compose_relative, project, rigid_inverse, rigid_matrix, unproject, CameraIntrinsics, CameraPose,
    PoseRecord, Projection, ROTATION_TOLERANCE, Z_NEAR,
};
pub use plucker::{plucker_embedding, PluckerMap};
pub use umeyama::{umeyama_fit, SimilarityTransform};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0:?}")]
    InvalidIntrinsics(CameraIntrinsics),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("invalid similarity transform: {0}")]
    InvalidSimilarity(String),
    #[error("degenerate correspondences: {0}")]
    DegenerateCorrespondences(String),
}
