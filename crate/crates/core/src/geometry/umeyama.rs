//! Closed-form least-squares similarity fit between corresponded point sets
//! (Umeyama's method, with scale).

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, SVD};

use super::camera::{check_rotation, rigid_matrix};
use super::{CameraPose, GeometryError};

/// Relative singular-value threshold below which the cross-covariance is
/// considered rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(GeometryError::InvalidSimilarity(format!("scale {scale} must be positive")));
        }
        check_rotation(&rotation).map_err(GeometryError::InvalidSimilarity)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        rigid_matrix(&(self.rotation * self.scale), &self.translation)
    }

    /// Re-expresses a camera whose extrinsic is defined in this transform's
    /// source frame as a rigid camera in the destination frame.
    ///
    /// The destination camera's coordinates are the source camera's scaled
    /// by `s`, so projections are unchanged and depths scale by `s`.
    pub fn transform_pose(&self, pose: &CameraPose) -> Result<CameraPose, GeometryError> {
        let rotation = pose.rotation() * self.rotation.transpose();
        let translation = self.scale * pose.translation() - rotation * self.translation;
        CameraPose::from_rotation_translation(pose.intrinsics, rotation, translation)
    }

    /// Root-mean-square of `|dst_k − T(src_k)|`.
    pub fn rms_residual(&self, src: &[Point3<f64>], dst: &[Point3<f64>]) -> f64 {
        if src.is_empty() {
            return 0.0;
        }
        let sum: f64 = src
            .iter()
            .zip(dst)
            .map(|(s, d)| (d - self.apply(s)).norm_squared())
            .sum();
        (sum / src.len() as f64).sqrt()
    }
}

/// Fits `(s, R, t)` minimizing `Σ |dst_k − (s·R·src_k + t)|²`.
pub fn umeyama_fit(src: &[Point3<f64>], dst: &[Point3<f64>]) -> Result<SimilarityTransform, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::DegenerateCorrespondences(format!(
            "length mismatch: {} source vs {} destination points",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::DegenerateCorrespondences(format!(
            "need at least 3 correspondences, got {n}"
        )));
    }
    if src.iter().chain(dst).any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(GeometryError::DegenerateCorrespondences("non-finite point".into()));
    }

    let inv_n = 1.0 / n as f64;
    let mu_src = src.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) * inv_n;
    let mu_dst = dst.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) * inv_n;

    let mut var_src = 0.0;
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let sc = s.coords - mu_src;
        let dc = d.coords - mu_dst;
        var_src += sc.norm_squared();
        cov += dc * sc.transpose();
    }
    var_src *= inv_n;
    cov *= inv_n;

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateCorrespondences("SVD failed".into())),
    };
    let sv = svd.singular_values;
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if !(sorted[0] > 0.0) || sorted[1] <= RANK_TOLERANCE * sorted[0] || var_src <= 0.0 {
        return Err(GeometryError::DegenerateCorrespondences(
            "cross-covariance has rank < 2 (collinear or coincident points)".into(),
        ));
    }

    // reflection correction on the smallest singular value
    let smallest = (0..3)
        .min_by(|&a, &b| sv[a].total_cmp(&sv[b]))
        .unwrap();
    let mut signs = Vector3::new(1.0, 1.0, 1.0);
    if u.determinant() * v_t.determinant() < 0.0 {
        signs[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&signs) * v_t;
    let scale = sv.component_mul(&signs).sum() / var_src;
    let translation = mu_dst - scale * (rotation * mu_src);

    SimilarityTransform::new(scale, rotation, translation)
}
