//! Region-wise affine alignment of predicted depth to sparse 3D anchors.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::DataprepError;
use crate::geometry::{CameraPose, Z_NEAR};
use crate::grid::{DepthMap, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Foreground,
    Background,
}

/// A triangulated 3D point observed at a pixel of the frame being aligned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseAnchor {
    pub u: usize,
    pub v: usize,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub region: Region,
}

impl SparseAnchor {
    pub fn point(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }
}

/// `corrected = scale · predicted + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub scale: f64,
    pub offset: f64,
    pub anchors_used: usize,
    /// RMS of `scale·d + offset − z` over the anchors used.
    pub rms: f64,
}

impl LinearFit {
    pub fn apply(&self, d: f64) -> f64 {
        self.scale * d + self.offset
    }
}

#[derive(Debug)]
pub struct DepthAlignment {
    pub foreground: Result<LinearFit, DataprepError>,
    pub background: Result<LinearFit, DataprepError>,
    /// Aligned depth. Pixels whose region has no fit, or whose prediction is
    /// not a positive finite value, are NaN.
    pub corrected: DepthMap,
}

impl DepthAlignment {
    pub fn fit(&self, region: Region) -> &Result<LinearFit, DataprepError> {
        match region {
            Region::Foreground => &self.foreground,
            Region::Background => &self.background,
        }
    }
}

/// Unweighted least-squares `a, b` minimizing `Σ (a·d + b − z)²`.
pub fn fit_linear(samples: &[(f64, f64)], region: Region) -> Result<LinearFit, DataprepError> {
    let n = samples.len();
    if n < 2 {
        return Err(DataprepError::InsufficientAnchors { region, found: n });
    }
    let nf = n as f64;
    let mean_d = samples.iter().map(|s| s.0).sum::<f64>() / nf;
    let mean_z = samples.iter().map(|s| s.1).sum::<f64>() / nf;
    let (mut sdd, mut sdz) = (0.0, 0.0);
    for &(d, z) in samples {
        sdd += (d - mean_d) * (d - mean_d);
        sdz += (d - mean_d) * (z - mean_z);
    }
    if !(sdd > 0.0) {
        return Err(DataprepError::DegenerateFit { region });
    }
    let scale = sdz / sdd;
    if !(scale > 0.0) {
        return Err(DataprepError::NonPositiveScale { region, scale });
    }
    let offset = mean_z - scale * mean_d;
    let rms = (samples
        .iter()
        .map(|&(d, z)| (scale * d + offset - z).powi(2))
        .sum::<f64>()
        / nf)
        .sqrt();
    Ok(LinearFit {
        scale,
        offset,
        anchors_used: n,
        rms,
    })
}

/// Fits foreground and background separately and applies each fit to the
/// pixels of its region (`region_mask` true = foreground).
pub fn align_depth(
    predicted: &DepthMap,
    anchors: &[SparseAnchor],
    pose: &CameraPose,
    region_mask: &Mask,
) -> Result<DepthAlignment, DataprepError> {
    let k = pose.intrinsics;
    if predicted.dims() != (k.width, k.height) || region_mask.dims() != predicted.dims() {
        return Err(DataprepError::ResolutionMismatch);
    }
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    let mut any_in_front = false;
    for a in anchors {
        let z = pose.world_to_camera(&a.point()).z;
        if !(z > Z_NEAR) {
            continue;
        }
        any_in_front = true;
        if a.u >= k.width || a.v >= k.height {
            continue;
        }
        let d = *predicted.get(a.u, a.v);
        if !(d.is_finite() && d > 0.0) {
            continue;
        }
        match a.region {
            Region::Foreground => fg.push((d, z)),
            Region::Background => bg.push((d, z)),
        }
    }
    if !any_in_front {
        return Err(DataprepError::NoValidAnchors);
    }
    let foreground = fit_linear(&fg, Region::Foreground);
    let background = fit_linear(&bg, Region::Background);
    let corrected = DepthMap::from_fn(k.width, k.height, |u, v| {
        let d = *predicted.get(u, v);
        let fit = if *region_mask.get(u, v) {
            &foreground
        } else {
            &background
        };
        match fit {
            Ok(f) if d.is_finite() && d > 0.0 => f.apply(d),
            _ => f64::NAN,
        }
    });
    Ok(DepthAlignment {
        foreground,
        background,
        corrected,
    })
}
