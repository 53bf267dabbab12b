//! Training-data preparation: depth alignment, sparse triangulation, sample
//! filtering and analytic synthetic scenes.

mod align;
mod filter;
pub mod scene;
mod triangulate;

pub use align::{align_depth, fit_linear, DepthAlignment, LinearFit, Region, SparseAnchor};
pub use filter::{
    consecutive_ious, filter_samples, FilterEntry, FilterReport, RejectReason, SampleRecord, Verdict,
    DEFAULT_MIN_MASK_IOU,
};
pub use scene::{generate_scene, SceneSpec, SyntheticSequence};
pub use triangulate::{
    epipolar_gate, fundamental_matrix, symmetric_epipolar_distance, triangulate_midpoint, Observation, PixelPair,
    DEFAULT_EPIPOLAR_GATE_PX,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataprepError {
    #[error("{region:?} region has {found} usable anchors, need at least 2")]
    InsufficientAnchors { region: Region, found: usize },
    #[error("{region:?} anchors have no spread in predicted depth")]
    DegenerateFit { region: Region },
    #[error("{region:?} fit has non-positive scale {scale}")]
    NonPositiveScale { region: Region, scale: f64 },
    #[error("no anchor lies in front of the camera")]
    NoValidAnchors,
    #[error("depth map, mask and camera resolutions differ")]
    ResolutionMismatch,
    #[error("triangulation failed: {0}")]
    Triangulation(String),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}
