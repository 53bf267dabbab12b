//! Sparse reconstruction helpers: multi-ray midpoint triangulation and
//! epipolar gating of two-view correspondences.

use nalgebra::{Matrix3, Point3, Vector3};

use super::DataprepError;
use crate::geometry::{compose_relative, CameraPose};

/// Default gate on the symmetric epipolar distance, in pixels.
pub const DEFAULT_EPIPOLAR_GATE_PX: f64 = 2.0;

/// An image observation in continuous pixel coordinates (pixel centers at
/// `+0.5`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub pose: &'a CameraPose,
    pub u: f64,
    pub v: f64,
}

fn world_ray(obs: &Observation) -> (Point3<f64>, Vector3<f64>) {
    let k = obs.pose.intrinsics;
    let cam = Vector3::new((obs.u - k.cx) / k.fx, (obs.v - k.cy) / k.fy, 1.0);
    (obs.pose.center(), (obs.pose.rotation().transpose() * cam).normalize())
}

/// Point minimizing the summed squared distance to every observation ray.
/// With two rays this is the midpoint of their common perpendicular.
pub fn triangulate_midpoint(observations: &[Observation]) -> Result<Point3<f64>, DataprepError> {
    if observations.len() < 2 {
        return Err(DataprepError::Triangulation(format!(
            "need at least 2 rays, got {}",
            observations.len()
        )));
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for obs in observations {
        let (o, d) = world_ray(obs);
        let proj = Matrix3::identity() - d * d.transpose();
        a += proj;
        b += proj * o.coords;
    }
    // rank-deficient when all rays are parallel
    let eig = a.symmetric_eigenvalues();
    if eig.min() <= 1e-12 * eig.max() {
        return Err(DataprepError::Triangulation("rays are parallel".into()));
    }
    a.lu()
        .solve(&b)
        .map(Point3::from)
        .ok_or_else(|| DataprepError::Triangulation("singular normal equations".into()))
}

/// Fundamental matrix with `x_bᵀ·F·x_a = 0` for homogeneous pixel
/// coordinates of matching points in views `a` and `b`.
pub fn fundamental_matrix(a: &CameraPose, b: &CameraPose) -> Matrix3<f64> {
    let rel = compose_relative(a, b);
    let r = rel.fixed_view::<3, 3>(0, 0).into_owned();
    let t = rel.fixed_view::<3, 1>(0, 3).into_owned();
    let essential = t.cross_matrix() * r;
    let ka_inv = a.intrinsics.matrix().try_inverse().expect("intrinsics are invertible");
    let kb_inv = b.intrinsics.matrix().try_inverse().expect("intrinsics are invertible");
    kb_inv.transpose() * essential * ka_inv
}

/// Mean of the two point-to-epipolar-line distances, in pixels.
pub fn symmetric_epipolar_distance(f: &Matrix3<f64>, xa: (f64, f64), xb: (f64, f64)) -> f64 {
    let pa = Vector3::new(xa.0, xa.1, 1.0);
    let pb = Vector3::new(xb.0, xb.1, 1.0);
    let line_b = f * pa;
    let line_a = f.transpose() * pb;
    let residual = pb.dot(&line_b);
    let db = residual.abs() / line_b.xy().norm();
    let da = residual.abs() / line_a.xy().norm();
    0.5 * (da + db)
}

/// Matching pixel coordinates in views `a` and `b`.
pub type PixelPair = ((f64, f64), (f64, f64));

/// Keeps correspondences whose symmetric epipolar distance is within
/// `gate_px`; returns one flag per pair.
pub fn epipolar_gate(
    a: &CameraPose,
    b: &CameraPose,
    pairs: &[PixelPair],
    gate_px: f64,
) -> Vec<bool> {
    let f = fundamental_matrix(a, b);
    pairs
        .iter()
        .map(|&(xa, xb)| {
            let d = symmetric_epipolar_distance(&f, xa, xb);
            d.is_finite() && d <= gate_px
        })
        .collect()
}
