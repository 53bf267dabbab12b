use nalgebra::{Point3, Vector3};

use super::CameraPose;

/// Per-pixel Plücker ray coordinates `(m, d)` with `m = o × d`, stored as
/// `height × width × 6` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PluckerMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl PluckerMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// The six channels of pixel `(u, v)`, moment first.
    pub fn get(&self, u: usize, v: usize) -> [f64; 6] {
        let i = (v * self.width + u) * 6;
        self.data[i..i + 6].try_into().unwrap()
    }

    pub fn moment(&self, u: usize, v: usize) -> Vector3<f64> {
        let c = self.get(u, v);
        Vector3::new(c[0], c[1], c[2])
    }

    pub fn direction(&self, u: usize, v: usize) -> Vector3<f64> {
        let c = self.get(u, v);
        Vector3::new(c[3], c[4], c[5])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Builds the Plücker embedding of every pixel-center ray of `pose`.
pub fn plucker_embedding(pose: &CameraPose) -> PluckerMap {
    let k = pose.intrinsics;
    let rt = pose.rotation().transpose();
    let origin: Point3<f64> = pose.center();
    let mut data = Vec::with_capacity(k.width * k.height * 6);
    for v in 0..k.height {
        for u in 0..k.width {
            let ray_cam = Vector3::new(
                (u as f64 + 0.5 - k.cx) / k.fx,
                (v as f64 + 0.5 - k.cy) / k.fy,
                1.0,
            );
            let d = (rt * ray_cam).normalize();
            let m = origin.coords.cross(&d);
            data.extend_from_slice(&[m.x, m.y, m.z, d.x, d.y, d.z]);
        }
    }
    PluckerMap {
        width: k.width,
        height: k.height,
        data,
    }
}
