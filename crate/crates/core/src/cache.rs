//! The world cache: a growable colored point cloud of static scene content.
//!
//! Points enter only through the visibility-gap rule: the cache is rendered
//! into a view, the coverage mask is dilated, and only static pixels outside
//! that mask are appended. Existing points are never moved, recolored or
//! removed.

use std::collections::BTreeMap;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{umeyama_fit, CameraPose, GeometryError, SimilarityTransform};
use crate::grid::{Mask, Rgb};
use crate::warp::{FrameBundle, Splatter, WarpError, WarpResult};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("no input frames")]
    EmptyInput,
    #[error("invalid cache config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Warp(#[from] WarpError),
}

/// Where a cache point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Provenance {
    pub frame: i32,
    /// 0 for the source video, ≥ 1 for progressive updates.
    pub round: i32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldCache {
    positions: Vec<Point3<f64>>,
    colors: Vec<Rgb>,
    provenance: Vec<Provenance>,
}

impl WorldCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Assembles a cache from parallel arrays. Fails if the lengths differ or
    /// any position is non-finite.
    pub fn from_parts(
        positions: Vec<Point3<f64>>,
        colors: Vec<Rgb>,
        provenance: Vec<Provenance>,
    ) -> Result<Self, CacheError> {
        if positions.len() != colors.len() || positions.len() != provenance.len() {
            return Err(CacheError::InvalidConfig(format!(
                "parallel arrays differ in length ({}, {}, {})",
                positions.len(),
                colors.len(),
                provenance.len()
            )));
        }
        if positions.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(CacheError::InvalidConfig("non-finite cache point".into()));
        }
        Ok(Self {
            positions,
            colors,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn colors(&self) -> &[Rgb] {
        &self.colors
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Appends one point. Non-finite points are skipped; returns whether the
    /// point was stored.
    pub fn push(&mut self, position: Point3<f64>, color: Rgb, provenance: Provenance) -> bool {
        if !position.iter().all(|c| c.is_finite()) {
            return false;
        }
        self.positions.push(position);
        self.colors.push(color);
        self.provenance.push(provenance);
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheBuildConfig {
    /// Number of frames sampled from the source video.
    pub sample_count: usize,
    /// Square dilation radius (pixels) applied to the coverage mask before
    /// gap detection.
    #[serde(default = "default_dilation")]
    pub visibility_dilation: usize,
}

fn default_dilation() -> usize {
    1
}

impl Default for CacheBuildConfig {
    fn default() -> Self {
        Self {
            sample_count: 5,
            visibility_dilation: default_dilation(),
        }
    }
}

/// `round(k·(n−1)/(l−1))` for `k = 0..l`; `[0]` when `l == 1`.
pub fn sample_indices(n: usize, l: usize) -> Result<Vec<usize>, CacheError> {
    if n == 0 {
        return Err(CacheError::EmptyInput);
    }
    if l == 0 || l > n {
        return Err(CacheError::InvalidConfig(format!(
            "sample count {l} must lie in 1..={n}"
        )));
    }
    if l == 1 {
        return Ok(vec![0]);
    }
    Ok((0..l)
        .map(|k| ((k * (n - 1)) as f64 / (l - 1) as f64).round() as usize)
        .collect())
}

/// Z-buffered nearest-pixel render of every cache point.
pub fn render_cache(cache: &WorldCache, pose: &CameraPose) -> WarpResult {
    let mut splatter = Splatter::new(pose.intrinsics);
    for (p, &c) in cache.positions.iter().zip(&cache.colors) {
        splatter.splat(&pose.world_to_camera(p), c);
    }
    splatter.finish()
}

/// Appends static pixels of `frame` not covered by the dilated render of the
/// current cache. `to_world` maps a camera-frame point into cache coordinates.
fn append_gaps(
    cache: &mut WorldCache,
    frame: &FrameBundle,
    render_pose: &CameraPose,
    dilation: usize,
    provenance: Provenance,
    to_world: impl Fn(&Point3<f64>) -> Point3<f64>,
) -> Result<usize, CacheError> {
    let k = render_pose.intrinsics;
    if (k.width, k.height) != frame.dims() {
        return Err(WarpError::ResolutionMismatch {
            expected: (k.width, k.height),
            got: frame.dims(),
        }
        .into());
    }
    let covered: Mask = render_cache(cache, render_pose).mask.dilate(dilation);
    let before = cache.len();
    for (u, v, p) in frame.points.iter_pixels() {
        if frame.is_static(u, v) && !*covered.get(u, v) {
            cache.push(to_world(p), *frame.rgb.get(u, v), provenance);
        }
    }
    Ok(cache.len() - before)
}

/// Builds a cache from the source video by visiting `config.sample_count`
/// uniformly sampled frames in temporal order.
pub fn build_cache(
    frames: &[FrameBundle],
    poses: &[CameraPose],
    config: &CacheBuildConfig,
) -> Result<WorldCache, CacheError> {
    if frames.is_empty() {
        return Err(CacheError::EmptyInput);
    }
    if frames.len() != poses.len() {
        return Err(CacheError::InvalidConfig(format!(
            "{} frames but {} poses",
            frames.len(),
            poses.len()
        )));
    }
    let mut cache = WorldCache::new();
    for i in sample_indices(frames.len(), config.sample_count)? {
        let pose = &poses[i];
        append_gaps(
            &mut cache,
            &frames[i],
            pose,
            config.visibility_dilation,
            Provenance {
                frame: i as i32,
                round: 0,
            },
            |p| pose.camera_to_world(p),
        )?;
    }
    Ok(cache)
}

/// A frame sampled from a newly generated segment, with points and pose
/// expressed in an independently estimated reconstruction.
#[derive(Debug, Clone)]
pub struct Anchor {
    pub frame: FrameBundle,
    pub pose: CameraPose,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    /// Maps estimated-reconstruction coordinates into cache coordinates.
    pub alignment: SimilarityTransform,
    /// RMS residual of the alignment on the supplied correspondences.
    pub alignment_rms: f64,
    pub appended: usize,
}

/// Aligns anchor frames to the cache with a similarity fitted on
/// `correspondence_src → correspondence_dst`, then merges their static
/// content through the visibility-gap rule. Appended points carry `round`.
pub fn update_cache(
    cache: &mut WorldCache,
    anchors: &[Anchor],
    correspondence_src: &[Point3<f64>],
    correspondence_dst: &[Point3<f64>],
    round: i32,
    dilation: usize,
) -> Result<UpdateOutcome, CacheError> {
    let alignment = umeyama_fit(correspondence_src, correspondence_dst)?;
    let alignment_rms = alignment.rms_residual(correspondence_src, correspondence_dst);
    // validate everything before mutating the cache
    let aligned_poses = anchors
        .iter()
        .map(|a| alignment.transform_pose(&a.pose))
        .collect::<Result<Vec<_>, _>>()?;
    for (anchor, pose) in anchors.iter().zip(&aligned_poses) {
        let k = pose.intrinsics;
        if (k.width, k.height) != anchor.frame.dims() {
            return Err(WarpError::ResolutionMismatch {
                expected: (k.width, k.height),
                got: anchor.frame.dims(),
            }
            .into());
        }
    }
    let mut appended = 0;
    for (anchor, pose) in anchors.iter().zip(&aligned_poses) {
        appended += append_gaps(
            cache,
            &anchor.frame,
            pose,
            dilation,
            Provenance {
                frame: anchor.frame_index as i32,
                round,
            },
            |p| alignment.apply(&anchor.pose.camera_to_world(p)),
        )?;
    }
    Ok(UpdateOutcome {
        alignment,
        alignment_rms,
        appended,
    })
}

/// Static points of `anchor` mapped into cache coordinates by `alignment`,
/// in row-major pixel order.
pub fn aligned_static_points(anchor: &Anchor, alignment: &SimilarityTransform) -> Vec<Point3<f64>> {
    anchor
        .frame
        .points
        .iter_pixels()
        .filter(|&(u, v, _)| anchor.frame.is_static(u, v))
        .map(|(_, _, p)| alignment.apply(&anchor.pose.camera_to_world(p)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheStats {
    pub count: usize,
    /// `None` when the cache is empty.
    pub bbox: Option<([f64; 3], [f64; 3])>,
    pub per_round: BTreeMap<i32, usize>,
}

pub fn cache_stats(cache: &WorldCache) -> CacheStats {
    let mut per_round = BTreeMap::new();
    for p in &cache.provenance {
        *per_round.entry(p.round).or_insert(0) += 1;
    }
    let bbox = cache.positions.iter().fold(None, |acc: Option<([f64; 3], [f64; 3])>, p| {
        let (mut lo, mut hi) = acc.unwrap_or(([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]));
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        Some((lo, hi))
    });
    CacheStats {
        count: cache.len(),
        bbox,
        per_round,
    }
}
