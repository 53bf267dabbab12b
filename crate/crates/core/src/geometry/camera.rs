use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Points with camera-frame depth at or below this are treated as behind
/// the camera.
pub const Z_NEAR: f64 = 1e-4;

/// Tolerance on orthonormality and unit determinant of pose rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Pinhole intrinsics. Pixel `(u, v)` covers `[u, u+1) × [v, v+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.width >= 1
            && self.height >= 1
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics(*self))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> Projection {
        let finite = p.x.is_finite() && p.y.is_finite() && p.z.is_finite();
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let in_frustum = finite
            && p.z > Z_NEAR
            && u >= 0.0
            && u < self.width as f64
            && v >= 0.0
            && v < self.height as f64;
        Projection {
            u,
            v,
            depth: p.z,
            in_frustum,
        }
    }

    /// Camera-frame point at depth `depth` along the ray through image
    /// coordinates `(u, v)` (continuous, not pixel indices).
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3<f64> {
        Point3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Camera-frame point at `depth` through the center of pixel `(u, v)`.
    #[inline]
    pub fn unproject_pixel(&self, u: usize, v: usize, depth: f64) -> Point3<f64> {
        self.unproject(u as f64 + 0.5, v as f64 + 0.5, depth)
    }
}

/// Result of projecting one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub in_frustum: bool,
}

impl Projection {
    /// Integer pixel containing `(u, v)`; only meaningful when in frustum.
    #[inline]
    pub fn pixel(&self) -> (usize, usize) {
        (self.u.floor() as usize, self.v.floor() as usize)
    }
}

/// Intrinsics plus a rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub intrinsics: CameraIntrinsics,
    extrinsic: Matrix4<f64>,
}

impl CameraPose {
    pub fn new(intrinsics: CameraIntrinsics, extrinsic: Matrix4<f64>) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        validate_rigid(&extrinsic)?;
        Ok(Self {
            intrinsics,
            extrinsic,
        })
    }

    pub fn from_rotation_translation(
        intrinsics: CameraIntrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        Self::new(intrinsics, rigid_matrix(&rotation, &translation))
    }

    /// A camera at `eye` looking at `target`, with image-down roughly along
    /// `-up`. Camera axes: +x right, +y down, +z forward.
    pub fn look_at(
        intrinsics: CameraIntrinsics,
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if !(right.norm() > 1e-12) || !forward.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidPose("degenerate look-at frame".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        // rows of the world-to-camera rotation are the camera axes in world
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::from_rotation_translation(intrinsics, rotation, translation)
    }

    pub fn identity(intrinsics: CameraIntrinsics) -> Result<Self, GeometryError> {
        Self::new(intrinsics, Matrix4::identity())
    }

    #[inline]
    pub fn extrinsic(&self) -> &Matrix4<f64> {
        &self.extrinsic
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.extrinsic.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.extrinsic.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera-to-world transform, computed as `[Rᵀ | -Rᵀt]`.
    pub fn inverse_extrinsic(&self) -> Matrix4<f64> {
        rigid_inverse(&self.extrinsic)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation().transpose() * self.translation()))
    }

    #[inline]
    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.extrinsic.transform_point(p)
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        let r = self.rotation();
        Point3::from(r.transpose() * (p.coords - self.translation()))
    }

    pub fn with_intrinsics(&self, intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            extrinsic: self.extrinsic,
        }
    }
}

/// Projects world points through `pose`. Non-finite inputs come back with
/// `in_frustum == false`.
pub fn project(points: &[Point3<f64>], pose: &CameraPose) -> Vec<Projection> {
    points
        .iter()
        .map(|p| pose.intrinsics.project(&pose.world_to_camera(p)))
        .collect()
}

/// Inverse of [`project`] for a single projection.
pub fn unproject(projection: &Projection, pose: &CameraPose) -> Point3<f64> {
    let cam = pose
        .intrinsics
        .unproject(projection.u, projection.v, projection.depth);
    pose.camera_to_world(&cam)
}

/// `target · source⁻¹`: maps source-camera coordinates to target-camera
/// coordinates.
pub fn compose_relative(source: &CameraPose, target: &CameraPose) -> Matrix4<f64> {
    target.extrinsic * source.inverse_extrinsic()
}

pub fn rigid_matrix(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(translation);
    m
}

pub fn rigid_inverse(m: &Matrix4<f64>) -> Matrix4<f64> {
    let r = m.fixed_view::<3, 3>(0, 0).transpose();
    let t = m.fixed_view::<3, 1>(0, 3).into_owned();
    rigid_matrix(&r, &(-(r * t)))
}

fn validate_rigid(m: &Matrix4<f64>) -> Result<(), GeometryError> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(GeometryError::InvalidPose("non-finite extrinsic".into()));
    }
    if m[(3, 0)] != 0.0 || m[(3, 1)] != 0.0 || m[(3, 2)] != 0.0 || m[(3, 3)] != 1.0 {
        return Err(GeometryError::InvalidPose(
            "bottom row must be exactly (0, 0, 0, 1)".into(),
        ));
    }
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    check_rotation(&r).map_err(GeometryError::InvalidPose)
}

/// Checks orthonormality and `det = +1` within [`ROTATION_TOLERANCE`].
pub(crate) fn check_rotation(r: &Matrix3<f64>) -> Result<(), String> {
    let err = (r.transpose() * r - Matrix3::identity()).amax();
    if err > ROTATION_TOLERANCE {
        return Err(format!("rotation not orthonormal (max error {err:e})"));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(format!("rotation determinant {det} is not +1"));
    }
    Ok(())
}

/// On-disk pose record: intrinsics plus a row-major 4×4 extrinsic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub extrinsic: [f64; 16],
}

impl From<&CameraPose> for PoseRecord {
    fn from(pose: &CameraPose) -> Self {
        let k = pose.intrinsics;
        let mut extrinsic = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                extrinsic[r * 4 + c] = pose.extrinsic[(r, c)];
            }
        }
        Self {
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width: k.width,
            height: k.height,
            extrinsic,
        }
    }
}

impl TryFrom<PoseRecord> for CameraPose {
    type Error = GeometryError;

    fn try_from(rec: PoseRecord) -> Result<Self, Self::Error> {
        let k = CameraIntrinsics::new(rec.fx, rec.fy, rec.cx, rec.cy, rec.width, rec.height)?;
        CameraPose::new(k, Matrix4::from_row_slice(&rec.extrinsic))
    }
}

impl Serialize for CameraPose {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseRecord::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for CameraPose {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rec = PoseRecord::deserialize(deserializer)?;
        CameraPose::try_from(rec).map_err(serde::de::Error::custom)
    }
}
