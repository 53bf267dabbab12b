//! Forward warping of dynamic regions, z-buffered point splatting and
//! depth-tested fusion of dynamic and static renders into coarse frames.

use nalgebra::Point3;
use thiserror::Error;

use crate::geometry::{compose_relative, CameraIntrinsics, CameraPose};
use crate::grid::{DepthMap, Grid, Mask, PointMap, Rgb, RgbImage};

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("resolution mismatch: expected {expected:?}, got {got:?}")]
    ResolutionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

fn check_dims(expected: (usize, usize), got: (usize, usize)) -> Result<(), WarpError> {
    if expected == got {
        Ok(())
    } else {
        Err(WarpError::ResolutionMismatch { expected, got })
    }
}

/// One source frame: colors, camera-frame points, and masks.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub rgb: RgbImage,
    /// Per-pixel 3D position in this frame's camera coordinates.
    pub points: PointMap,
    pub dynamic_mask: Mask,
    pub point_valid: Mask,
}

impl FrameBundle {
    pub fn new(rgb: RgbImage, points: PointMap, dynamic_mask: Mask, point_valid: Mask) -> Result<Self, WarpError> {
        let dims = rgb.dims();
        check_dims(dims, points.dims())?;
        check_dims(dims, dynamic_mask.dims())?;
        check_dims(dims, point_valid.dims())?;
        Ok(Self {
            rgb,
            points,
            dynamic_mask,
            point_valid,
        })
    }

    /// Builds a frame from a depth map by back-projecting pixel centers.
    /// Pixels with non-finite or non-positive depth are marked invalid.
    pub fn from_depth(
        rgb: RgbImage,
        depth: &DepthMap,
        dynamic_mask: Mask,
        intrinsics: &CameraIntrinsics,
    ) -> Result<Self, WarpError> {
        check_dims((intrinsics.width, intrinsics.height), rgb.dims())?;
        check_dims(rgb.dims(), depth.dims())?;
        let point_valid = depth.map(|&z| z.is_finite() && z > 0.0);
        let points = Grid::from_fn(depth.width(), depth.height(), |u, v| {
            let z = *depth.get(u, v);
            if z.is_finite() && z > 0.0 {
                intrinsics.unproject_pixel(u, v, z)
            } else {
                Point3::origin()
            }
        });
        Self::new(rgb, points, dynamic_mask, point_valid)
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }

    /// Whether pixel `(u, v)` is point-valid and static.
    #[inline]
    pub fn is_static(&self, u: usize, v: usize) -> bool {
        *self.point_valid.get(u, v) && !*self.dynamic_mask.get(u, v)
    }

    #[inline]
    pub fn is_dynamic(&self, u: usize, v: usize) -> bool {
        *self.point_valid.get(u, v) && *self.dynamic_mask.get(u, v)
    }

    pub fn static_count(&self) -> usize {
        self.rgb
            .iter_pixels()
            .filter(|&(u, v, _)| self.is_static(u, v))
            .count()
    }
}

/// A rendered or warped target view. `depth` is `+inf` where `mask` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub mask: Mask,
}

impl WarpResult {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            rgb: Grid::filled(width, height, [0; 3]),
            depth: Grid::filled(width, height, f64::INFINITY),
            mask: Grid::filled(width, height, false),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.rgb.dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseFrame {
    pub rgb: RgbImage,
    pub mask: Mask,
}

/// Nearest-pixel point splatter with a z-buffer. Candidates that tie on
/// depth keep the first one splatted.
#[derive(Debug, Clone)]
pub struct Splatter {
    intrinsics: CameraIntrinsics,
    out: WarpResult,
}

impl Splatter {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            out: WarpResult::empty(intrinsics.width, intrinsics.height),
            intrinsics,
        }
    }

    /// Projects a camera-frame point and keeps it if nearer than what the
    /// target pixel holds. Returns whether the point landed in frustum.
    #[inline]
    pub fn splat(&mut self, p_cam: &Point3<f64>, color: Rgb) -> bool {
        let proj = self.intrinsics.project(p_cam);
        if !proj.in_frustum {
            return false;
        }
        let (u, v) = proj.pixel();
        let i = self.out.depth.index(u, v);
        if proj.depth < self.out.depth.as_slice()[i] {
            self.out.depth.as_mut_slice()[i] = proj.depth;
            self.out.rgb.as_mut_slice()[i] = color;
            self.out.mask.as_mut_slice()[i] = true;
        }
        true
    }

    pub fn finish(self) -> WarpResult {
        self.out
    }
}

/// Warps the dynamic, point-valid pixels of `frame` from `source_pose` into
/// `target_pose`.
pub fn warp_dynamic(
    frame: &FrameBundle,
    source_pose: &CameraPose,
    target_pose: &CameraPose,
) -> Result<WarpResult, WarpError> {
    let k = target_pose.intrinsics;
    check_dims((k.width, k.height), frame.dims())?;
    let rel = compose_relative(source_pose, target_pose);
    let mut splatter = Splatter::new(k);
    for (u, v, p) in frame.points.iter_pixels() {
        if frame.is_dynamic(u, v) {
            splatter.splat(&rel.transform_point(p), *frame.rgb.get(u, v));
        }
    }
    Ok(splatter.finish())
}

/// Per-pixel depth-tested fusion. Where both inputs are valid the nearer
/// one wins; on an exact depth tie the dynamic input wins.
pub fn fuse_coarse(dynamic: &WarpResult, static_render: &WarpResult) -> Result<CoarseFrame, WarpError> {
    check_dims(dynamic.dims(), static_render.dims())?;
    let (w, h) = dynamic.dims();
    let mut rgb = Grid::filled(w, h, [0u8; 3]);
    let mut mask = Grid::filled(w, h, false);
    let n = w * h;
    for i in 0..n {
        let d_ok = dynamic.mask.as_slice()[i];
        let s_ok = static_render.mask.as_slice()[i];
        let pick = match (d_ok, s_ok) {
            (true, true) => {
                if dynamic.depth.as_slice()[i] <= static_render.depth.as_slice()[i] {
                    Some(dynamic.rgb.as_slice()[i])
                } else {
                    Some(static_render.rgb.as_slice()[i])
                }
            }
            (true, false) => Some(dynamic.rgb.as_slice()[i]),
            (false, true) => Some(static_render.rgb.as_slice()[i]),
            (false, false) => None,
        };
        if let Some(c) = pick {
            rgb.as_mut_slice()[i] = c;
            mask.as_mut_slice()[i] = true;
        }
    }
    Ok(CoarseFrame { rgb, mask })
}

/// Intersection over union; 1.0 when both masks are empty.
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, WarpError> {
    check_dims(a.dims(), b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// PSNR in dB over all channels with peak 255; `+inf` for identical images.
pub fn psnr(reference: &RgbImage, candidate: &RgbImage) -> Result<f64, WarpError> {
    check_dims(reference.dims(), candidate.dims())?;
    Ok(psnr_from_sse(
        sum_squared_error(reference, candidate, |_| true),
        reference.len() * 3,
    ))
}

/// PSNR restricted to pixels where `mask` is set. An empty mask yields
/// `+inf` (no measured error).
pub fn psnr_masked(reference: &RgbImage, candidate: &RgbImage, mask: &Mask) -> Result<f64, WarpError> {
    check_dims(reference.dims(), candidate.dims())?;
    check_dims(reference.dims(), mask.dims())?;
    let m = mask.as_slice();
    Ok(psnr_from_sse(
        sum_squared_error(reference, candidate, |i| m[i]),
        mask.count() * 3,
    ))
}

fn sum_squared_error(a: &RgbImage, b: &RgbImage, include: impl Fn(usize) -> bool) -> u64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .enumerate()
        .filter(|&(i, _)| include(i))
        .map(|(_, (p, q))| {
            p.iter()
                .zip(q)
                .map(|(&x, &y)| {
                    let d = x as i64 - y as i64;
                    (d * d) as u64
                })
                .sum::<u64>()
        })
        .sum()
}

fn psnr_from_sse(sse: u64, samples: usize) -> f64 {
    if sse == 0 || samples == 0 {
        return f64::INFINITY;
    }
    let mse = sse as f64 / samples as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn intrinsics(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap()
    }

    fn planar_frame(k: &CameraIntrinsics, depth: f64) -> FrameBundle {
        let (w, h) = (k.width, k.height);
        let rgb = Grid::from_fn(w, h, |u, v| [(u * 17) as u8, (v * 29) as u8, ((u + v) * 7) as u8]);
        let depth = Grid::filled(w, h, depth);
        let dynamic = Grid::from_fn(w, h, |u, v| (2..6).contains(&u) && (1..5).contains(&v));
        FrameBundle::from_depth(rgb, &depth, dynamic, k).unwrap()
    }

    #[test]
    fn identity_warp_reproduces_dynamic_region() {
        let k = intrinsics(8, 6);
        let frame = planar_frame(&k, 1.0);
        let pose = CameraPose::identity(k).unwrap();
        let out = warp_dynamic(&frame, &pose, &pose).unwrap();
        assert_eq!(out.mask, frame.dynamic_mask);
        for (u, v, &m) in out.mask.iter_pixels() {
            if m {
                assert_eq!(out.rgb.get(u, v), frame.rgb.get(u, v));
                assert!((out.depth.get(u, v) - 1.0).abs() < 1e-12);
            } else {
                assert_eq!(*out.depth.get(u, v), f64::INFINITY);
            }
        }
    }

    #[test]
    fn z_buffer_keeps_nearer_point() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        let rgb = Grid::from_vec(2, 1, vec![[255, 0, 0], [0, 255, 0]]).unwrap();
        // both points land on the one-pixel target at (0.1, 0.1)/z scaled
        let points = Grid::from_vec(
            2,
            1,
            vec![Point3::new(0.2, 0.2, 2.0), Point3::new(0.1, 0.1, 1.0)],
        )
        .unwrap();
        let frame = FrameBundle::new(rgb, points, Grid::filled(2, 1, true), Grid::filled(2, 1, true)).unwrap();
        let mut splatter = Splatter::new(k);
        for (u, v, p) in frame.points.iter_pixels() {
            splatter.splat(p, *frame.rgb.get(u, v));
        }
        let out = splatter.finish();
        assert_eq!(*out.rgb.get(0, 0), [0, 255, 0]);
        assert_eq!(*out.depth.get(0, 0), 1.0);
    }

    #[test]
    fn warp_rejects_resolution_mismatch() {
        let k = intrinsics(8, 6);
        let frame = planar_frame(&k, 1.0);
        let other = CameraPose::identity(intrinsics(8, 7)).unwrap();
        let pose = CameraPose::identity(k).unwrap();
        assert!(matches!(
            warp_dynamic(&frame, &pose, &other),
            Err(WarpError::ResolutionMismatch { .. })
        ));
    }

    #[test]
    fn translated_target_shifts_region() {
        let k = intrinsics(8, 6);
        let frame = planar_frame(&k, 1.0);
        let src = CameraPose::identity(k).unwrap();
        // moving the camera by -1/8 along x shifts the image by +1 pixel
        let dst = CameraPose::from_rotation_translation(k, Matrix3::identity(), Vector3::new(0.125, 0.0, 0.0))
            .unwrap();
        let out = warp_dynamic(&frame, &src, &dst).unwrap();
        for (u, v, &m) in frame.dynamic_mask.iter_pixels() {
            if m {
                assert!(*out.mask.get(u + 1, v));
                assert_eq!(out.rgb.get(u + 1, v), frame.rgb.get(u, v));
            }
        }
        assert_eq!(out.mask.count(), frame.dynamic_mask.count());
    }

    fn single(depth: f64, color: Rgb) -> WarpResult {
        let mut r = WarpResult::empty(1, 1);
        if depth.is_finite() {
            r.rgb.set(0, 0, color);
            r.depth.set(0, 0, depth);
            r.mask.set(0, 0, true);
        }
        r
    }

    #[test]
    fn fusion_rules() {
        let d = single(0.5, [1, 1, 1]);
        let s = single(1.0, [2, 2, 2]);
        assert_eq!(*fuse_coarse(&d, &s).unwrap().rgb.get(0, 0), [1, 1, 1]);
        assert_eq!(*fuse_coarse(&single(2.0, [1, 1, 1]), &s).unwrap().rgb.get(0, 0), [2, 2, 2]);
        // exact tie: dynamic wins
        assert_eq!(*fuse_coarse(&single(1.0, [1, 1, 1]), &s).unwrap().rgb.get(0, 0), [1, 1, 1]);
        let empty = fuse_coarse(&single(f64::INFINITY, [0; 3]), &single(f64::INFINITY, [0; 3])).unwrap();
        assert!(!*empty.mask.get(0, 0));
        assert_eq!(*empty.rgb.get(0, 0), [0, 0, 0]);
        let static_only = fuse_coarse(&WarpResult::empty(1, 1), &s).unwrap();
        assert_eq!(static_only.rgb, s.rgb);
        assert_eq!(static_only.mask, s.mask);
    }

    #[test]
    fn iou_examples() {
        let full = Mask::filled(4, 4, true);
        let left = Mask::from_fn(4, 4, |u, _| u < 2);
        let right = Mask::from_fn(4, 4, |u, _| u >= 2);
        let none = Mask::filled(4, 4, false);
        assert_eq!(mask_iou(&left, &left).unwrap(), 1.0);
        assert_eq!(mask_iou(&left, &right).unwrap(), 0.0);
        // 8 of 16 pixels intersect, union is all 16
        assert_eq!(mask_iou(&left, &full).unwrap(), 0.5);
        assert_eq!(mask_iou(&none, &none).unwrap(), 1.0);
        assert!(mask_iou(&left, &Mask::filled(4, 3, true)).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = Grid::from_fn(5, 4, |u, v| [(u * 10) as u8, (v * 20) as u8, 100]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|p| p.map(|c| c + 16));
        let expected = 10.0 * (255.0f64.powi(2) / 256.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 24.0484).abs() < 1e-4);
        assert!(psnr(&a, &Grid::filled(5, 5, [0; 3])).is_err());
    }

    #[test]
    fn masked_psnr_ignores_outside() {
        let a = Grid::filled(4, 4, [100u8; 3]);
        let mut b = a.clone();
        b.set(3, 3, [0, 0, 0]);
        let mask = Mask::from_fn(4, 4, |u, _| u < 2);
        assert_eq!(psnr_masked(&a, &b, &mask).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b).unwrap().is_finite());
    }
}
