//! Analytic ray-cast scenes used as exact fixtures.
//!
//! Scenes are built from textured rectangles, axis-aligned boxes (six
//! rectangles each) and an optional moving sphere that constitutes the
//! dynamic content. Every pixel-center ray is intersected analytically, so
//! per-pixel points reproject onto their own pixel centers up to rounding.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::DataprepError;
use crate::cache::{Provenance, WorldCache};
use crate::geometry::{CameraIntrinsics, CameraPose, Z_NEAR};
use crate::grid::{Grid, Rgb};
use crate::warp::FrameBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Solid { color: Rgb },
    /// Alternating colors over a `cells[0] × cells[1]` grid in surface
    /// coordinates.
    Checker { a: Rgb, b: Rgb, cells: [u32; 2] },
}

impl Texture {
    fn sample(&self, s: f64, t: f64) -> Rgb {
        match *self {
            Texture::Solid { color } => color,
            Texture::Checker { a, b, cells } => {
                let i = (s * cells[0] as f64).floor() as i64;
                let j = (t * cells[1] as f64).floor() as i64;
                if (i + j).rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// Rectangle `origin + s·axis_u + t·axis_v`, `s, t ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub texture: Texture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub texture: Texture,
}

/// The dynamic object: a sphere whose center moves by `velocity` per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec {
    pub center: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    pub radius: f64,
    pub color: Rgb,
}

fn z_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CameraPath {
    Static {
        eye: [f64; 3],
        target: [f64; 3],
        #[serde(default = "z_up")]
        up: [f64; 3],
    },
    /// Eye moves linearly from `start` to `end` over the sequence.
    Linear {
        start: [f64; 3],
        end: [f64; 3],
        target: [f64; 3],
        #[serde(default = "z_up")]
        up: [f64; 3],
    },
    /// Eye on a horizontal circle around `center` (z up), angles in degrees.
    Orbit {
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        height: f64,
        start_deg: f64,
        end_deg: f64,
        target: [f64; 3],
        #[serde(default = "z_up")]
        up: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    /// Defaults to the image center.
    #[serde(default)]
    pub cx: Option<f64>,
    #[serde(default)]
    pub cy: Option<f64>,
    #[serde(default)]
    pub planes: Vec<PlaneSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub sphere: Option<SphereSpec>,
    pub camera: CameraPath,
}

/// Frames, poses and the naive union of all static observations.
#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub frames: Vec<FrameBundle>,
    pub poses: Vec<CameraPose>,
    /// Every static point-valid pixel of every frame, in world coordinates.
    pub ground_truth: WorldCache,
}

struct Rect {
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    normal: Vector3<f64>,
    u_len2: f64,
    v_len2: f64,
    texture: Texture,
}

impl Rect {
    fn new(origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, texture: Texture) -> Result<Self, DataprepError> {
        let normal = u.cross(&v);
        if !(normal.norm() > 1e-12) || !normal.iter().all(|c| c.is_finite()) {
            return Err(DataprepError::InvalidSpec("zero-area plane".into()));
        }
        Ok(Self {
            origin,
            u,
            v,
            normal: normal.normalize(),
            u_len2: u.norm_squared(),
            v_len2: v.norm_squared(),
            texture,
        })
    }

    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Rgb)> {
        let denom = self.normal.dot(d);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - o)) / denom;
        if !(t > Z_NEAR) {
            return None;
        }
        let local = o + d * t - self.origin;
        let s = local.dot(&self.u) / self.u_len2;
        let r = local.dot(&self.v) / self.v_len2;
        if (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&r) {
            Some((t, self.texture.sample(s, r)))
        } else {
            None
        }
    }
}

fn box_faces(b: &BoxSpec) -> Result<Vec<Rect>, DataprepError> {
    let lo = Vector3::from(b.min);
    let hi = Vector3::from(b.max);
    if (0..3).any(|k| !(hi[k] > lo[k])) {
        return Err(DataprepError::InvalidSpec("box max must exceed min on every axis".into()));
    }
    let e = hi - lo;
    let (ex, ey, ez) = (
        Vector3::new(e.x, 0.0, 0.0),
        Vector3::new(0.0, e.y, 0.0),
        Vector3::new(0.0, 0.0, e.z),
    );
    let t = &b.texture;
    Ok(vec![
        Rect::new(lo, ey, ez, t.clone())?,
        Rect::new(lo + ex, ey, ez, t.clone())?,
        Rect::new(lo, ex, ez, t.clone())?,
        Rect::new(lo + ey, ex, ez, t.clone())?,
        Rect::new(lo, ex, ey, t.clone())?,
        Rect::new(lo + ez, ex, ey, t.clone())?,
    ])
}

fn sphere_hit(center: &Vector3<f64>, radius: f64, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let oc = o - center;
    let a = d.norm_squared();
    let b = 2.0 * d.dot(&oc);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
        .into_iter()
        .find(|&t| t > Z_NEAR)
}

impl SceneSpec {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics, DataprepError> {
        CameraIntrinsics::new(
            self.fx,
            self.fy,
            self.cx.unwrap_or(self.width as f64 / 2.0),
            self.cy.unwrap_or(self.height as f64 / 2.0),
            self.width,
            self.height,
        )
        .map_err(|e| DataprepError::InvalidSpec(e.to_string()))
    }

    /// Camera pose of frame `i` out of `n`.
    pub fn pose(&self, i: usize, n: usize) -> Result<CameraPose, DataprepError> {
        let k = self.intrinsics()?;
        let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
        let (eye, target, up) = match &self.camera {
            CameraPath::Static { eye, target, up } => (Vector3::from(*eye), *target, *up),
            CameraPath::Linear { start, end, target, up } => {
                let (s, e) = (Vector3::from(*start), Vector3::from(*end));
                (s + (e - s) * frac, *target, *up)
            }
            CameraPath::Orbit {
                center,
                radius,
                height,
                start_deg,
                end_deg,
                target,
                up,
            } => {
                let theta = (start_deg + (end_deg - start_deg) * frac).to_radians();
                let c = Vector3::from(*center);
                (
                    c + Vector3::new(radius * theta.cos(), radius * theta.sin(), *height),
                    *target,
                    *up,
                )
            }
        };
        CameraPose::look_at(k, Point3::from(eye), Point3::from(target), Vector3::from(up))
            .map_err(|e| DataprepError::InvalidSpec(e.to_string()))
    }

    fn surfaces(&self) -> Result<Vec<Rect>, DataprepError> {
        let mut rects = Vec::new();
        for p in &self.planes {
            rects.push(Rect::new(
                Vector3::from(p.origin),
                Vector3::from(p.axis_u),
                Vector3::from(p.axis_v),
                p.texture.clone(),
            )?);
        }
        for b in &self.boxes {
            rects.extend(box_faces(b)?);
        }
        Ok(rects)
    }

    fn validate(&self) -> Result<(), DataprepError> {
        self.intrinsics()?;
        if let Some(s) = &self.sphere {
            if !(s.radius > 0.0) {
                return Err(DataprepError::InvalidSpec("sphere radius must be positive".into()));
            }
        }
        Ok(())
    }

    /// A single fronto-parallel checkered wall at depth `depth` seen by a
    /// static camera at the origin looking along +y.
    pub fn fronto_parallel_plane(width: usize, height: usize, depth: f64) -> Self {
        let half = depth * 2.0;
        SceneSpec {
            width,
            height,
            fx: width as f64,
            fy: width as f64,
            cx: None,
            cy: None,
            planes: vec![PlaneSpec {
                origin: [-half, depth, -half],
                axis_u: [2.0 * half, 0.0, 0.0],
                axis_v: [0.0, 0.0, 2.0 * half],
                texture: Texture::Checker {
                    a: [200, 60, 40],
                    b: [30, 90, 210],
                    cells: [8, 8],
                },
            }],
            boxes: vec![],
            sphere: None,
            camera: CameraPath::Static {
                eye: [0.0, 0.0, 0.0],
                target: [0.0, 1.0, 0.0],
                up: z_up(),
            },
        }
    }

    /// The inside of a 10×10×4 room (walls colored per face) seen from its
    /// interior; convex, so no surface occludes another.
    pub fn room(width: usize, height: usize, camera: CameraPath) -> Self {
        let wall = |origin: [f64; 3], u: [f64; 3], v: [f64; 3], a: Rgb, b: Rgb| PlaneSpec {
            origin,
            axis_u: u,
            axis_v: v,
            texture: Texture::Checker { a, b, cells: [4, 2] },
        };
        SceneSpec {
            width,
            height,
            fx: width as f64 * 0.6,
            fy: width as f64 * 0.6,
            cx: None,
            cy: None,
            planes: vec![
                wall([-5.0, -5.0, 0.0], [10.0, 0.0, 0.0], [0.0, 0.0, 4.0], [220, 40, 40], [240, 160, 160]),
                wall([-5.0, 5.0, 0.0], [10.0, 0.0, 0.0], [0.0, 0.0, 4.0], [40, 200, 40], [160, 240, 160]),
                wall([-5.0, -5.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 4.0], [40, 40, 220], [160, 160, 240]),
                wall([5.0, -5.0, 0.0], [0.0, 10.0, 0.0], [0.0, 0.0, 4.0], [200, 200, 40], [240, 240, 160]),
                PlaneSpec {
                    origin: [-5.0, -5.0, 0.0],
                    axis_u: [10.0, 0.0, 0.0],
                    axis_v: [0.0, 10.0, 0.0],
                    texture: Texture::Checker { a: [90, 90, 90], b: [150, 150, 150], cells: [5, 5] },
                },
                PlaneSpec {
                    origin: [-5.0, -5.0, 4.0],
                    axis_u: [10.0, 0.0, 0.0],
                    axis_v: [0.0, 10.0, 0.0],
                    texture: Texture::Solid { color: [250, 250, 250] },
                },
            ],
            boxes: vec![],
            sphere: None,
            camera,
        }
    }
}

/// Ray-casts `frame_count` frames of `spec`.
pub fn generate_scene(spec: &SceneSpec, frame_count: usize) -> Result<SyntheticSequence, DataprepError> {
    if frame_count == 0 {
        return Err(DataprepError::InvalidSpec("frame count must be positive".into()));
    }
    spec.validate()?;
    let rects = spec.surfaces()?;
    let k = spec.intrinsics()?;
    let mut frames = Vec::with_capacity(frame_count);
    let mut poses = Vec::with_capacity(frame_count);
    let mut ground_truth = WorldCache::new();
    for i in 0..frame_count {
        let pose = spec.pose(i, frame_count)?;
        let origin = pose.center().coords;
        let rt = pose.rotation().transpose();
        let sphere_center = spec.sphere.as_ref().map(|s| {
            Vector3::from(s.center) + Vector3::from(s.velocity) * i as f64
        });

        let mut rgb = Grid::filled(k.width, k.height, [0u8; 3]);
        let mut points = Grid::filled(k.width, k.height, Point3::origin());
        let mut dynamic = Grid::filled(k.width, k.height, false);
        let mut valid = Grid::filled(k.width, k.height, false);
        for v in 0..k.height {
            for u in 0..k.width {
                // camera-frame direction with unit z, so hit parameter = depth
                let dir_cam = Vector3::new(
                    (u as f64 + 0.5 - k.cx) / k.fx,
                    (v as f64 + 0.5 - k.cy) / k.fy,
                    1.0,
                );
                let dir = rt * dir_cam;
                let mut best: Option<(f64, Rgb, bool)> = None;
                for r in &rects {
                    if let Some((t, c)) = r.intersect(&origin, &dir) {
                        if best.is_none_or(|b| t < b.0) {
                            best = Some((t, c, false));
                        }
                    }
                }
                if let (Some(s), Some(c)) = (&spec.sphere, &sphere_center) {
                    if let Some(t) = sphere_hit(c, s.radius, &origin, &dir) {
                        if best.is_none_or(|b| t < b.0) {
                            best = Some((t, s.color, true));
                        }
                    }
                }
                if let Some((t, color, is_dynamic)) = best {
                    let p = Point3::from(dir_cam * t);
                    rgb.set(u, v, color);
                    points.set(u, v, p);
                    valid.set(u, v, true);
                    dynamic.set(u, v, is_dynamic);
                    if !is_dynamic {
                        ground_truth.push(
                            pose.camera_to_world(&p),
                            color,
                            Provenance { frame: i as i32, round: 0 },
                        );
                    }
                }
            }
        }
        frames.push(FrameBundle::new(rgb, points, dynamic, valid).expect("grids share dimensions"));
        poses.push(pose);
    }
    Ok(SyntheticSequence {
        frames,
        poses,
        ground_truth,
    })
}
