use hybridwarp::dataprep::scene::{BoxSpec, CameraPath, PlaneSpec, SphereSpec, Texture};
use hybridwarp::dataprep::{
    align_depth, epipolar_gate, filter_samples, generate_scene, triangulate_midpoint, DataprepError, Observation,
    Region, RejectReason, SampleRecord, SceneSpec, SparseAnchor, SyntheticSequence, Verdict,
};
use hybridwarp::geometry::CameraPose;
use hybridwarp::grid::{DepthMap, Grid, Mask};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;

fn box_orbit(radius: f64, height: f64, start: f64, span: f64) -> SceneSpec {
    SceneSpec {
        width: 40,
        height: 30,
        fx: 36.0,
        fy: 36.0,
        cx: None,
        cy: None,
        planes: vec![PlaneSpec {
            origin: [-20.0, -20.0, -1.0],
            axis_u: [40.0, 0.0, 0.0],
            axis_v: [0.0, 40.0, 0.0],
            texture: Texture::Checker { a: [90, 90, 90], b: [160, 160, 160], cells: [20, 20] },
        }],
        boxes: vec![BoxSpec {
            min: [-1.0, -1.0, -1.0],
            max: [1.0, 1.0, 1.0],
            texture: Texture::Checker { a: [200, 30, 30], b: [30, 30, 200], cells: [3, 3] },
        }],
        sphere: None,
        camera: CameraPath::Orbit {
            center: [0.0, 0.0, 0.0],
            radius,
            height,
            start_deg: start,
            end_deg: start + span,
            target: [0.0, 0.0, 0.0],
            up: [0.0, 0.0, 1.0],
        },
    }
}

fn room_with_sphere(center: [f64; 3], velocity: [f64; 3], radius: f64) -> SceneSpec {
    SceneSpec {
        sphere: Some(SphereSpec { center, velocity, radius, color: [255, 0, 255] }),
        ..SceneSpec::room(
            48,
            36,
            CameraPath::Static { eye: [0.0, -4.0, 2.0], target: [0.0, 0.0, 1.5], up: [0.0, 0.0, 1.0] },
        )
    }
}

/// Pixel centers whose viewing ray meets the sphere in front of the camera.
fn analytic_footprint(pose: &CameraPose, center: Vector3<f64>, radius: f64) -> Mask {
    let k = pose.intrinsics;
    let c = pose.world_to_camera(&Point3::from(center)).coords;
    Grid::from_fn(k.width, k.height, |u, v| {
        let d = Vector3::new((u as f64 + 0.5 - k.cx) / k.fx, (v as f64 + 0.5 - k.cy) / k.fy, 1.0);
        let b = d.dot(&c);
        let disc = b * b - d.norm_squared() * (c.norm_squared() - radius * radius);
        disc >= 0.0 && b + disc.sqrt() > 0.0
    })
}

fn check_bundle_invariants(seq: &SyntheticSequence) {
    let mut static_total = 0;
    for (f, pose) in seq.frames.iter().zip(&seq.poses) {
        let k = pose.intrinsics;
        assert_eq!(f.dims(), (k.width, k.height));
        assert_eq!(f.points.dims(), f.rgb.dims());
        assert_eq!(f.dynamic_mask.dims(), f.rgb.dims());
        assert_eq!(f.point_valid.dims(), f.rgb.dims());
        for (u, v, p) in f.points.iter_pixels() {
            if *f.point_valid.get(u, v) {
                assert!(p.iter().all(|c| c.is_finite()) && p.z > 0.0);
            }
            if *f.dynamic_mask.get(u, v) {
                assert!(*f.point_valid.get(u, v));
            }
        }
        static_total += f.static_count();
    }
    assert_eq!(seq.ground_truth.len(), static_total);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn box_orbit_points_reproject_onto_own_pixels(
        radius in 3.0..8.0f64,
        height in -0.5..4.0f64,
        start in -180.0..180.0f64,
        span in 0.0..270.0f64,
    ) {
        let seq = generate_scene(&box_orbit(radius, height, start, span), 4).unwrap();
        check_bundle_invariants(&seq);
        for (f, pose) in seq.frames.iter().zip(&seq.poses) {
            prop_assert!(f.point_valid.count() > 0);
            for (u, v, p) in f.points.iter_pixels() {
                if !*f.point_valid.get(u, v) {
                    continue;
                }
                let world = pose.camera_to_world(p);
                let proj = pose.intrinsics.project(&pose.world_to_camera(&world));
                prop_assert!((proj.u - (u as f64 + 0.5)).abs() < 1e-7);
                prop_assert!((proj.v - (v as f64 + 0.5)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn dynamic_mask_is_the_sphere_footprint(
        cx in -2.0..2.0f64,
        cy in -1.0..2.0f64,
        cz in 1.0..2.5f64,
        vx in -0.3..0.3f64,
        vy in -0.3..0.3f64,
        r in 0.2..0.9f64,
    ) {
        let spec = room_with_sphere([cx, cy, cz], [vx, vy, 0.0], r);
        let seq = generate_scene(&spec, 4).unwrap();
        check_bundle_invariants(&seq);
        for (i, (f, pose)) in seq.frames.iter().zip(&seq.poses).enumerate() {
            let center = Vector3::new(cx, cy, cz) + Vector3::new(vx, vy, 0.0) * i as f64;
            prop_assert_eq!(&f.dynamic_mask, &analytic_footprint(pose, center, r));
        }
    }

    #[test]
    fn fitted_depth_is_least_squares_minimum(
        a_fg in 0.3..4.0f64,
        b_fg in -2.0..2.0f64,
        a_bg in 0.3..4.0f64,
        b_bg in -2.0..2.0f64,
        noise_seed in any::<u64>(),
    ) {
        let (seq, mask) = split_room();
        let (pred, anchors) = distorted(&seq, &mask, (a_fg, b_fg), (a_bg, b_bg), noise_seed, 0.05);
        let out = align_depth(&pred, &anchors, &seq.poses[0], &mask).unwrap();
        for region in [Region::Foreground, Region::Background] {
            let fit = out.fit(region).as_ref().unwrap();
            let samples: Vec<(f64, f64)> = anchors
                .iter()
                .filter(|x| x.region == region)
                .map(|x| (*pred.get(x.u, x.v), seq.poses[0].world_to_camera(&x.point()).z))
                .filter(|&(d, _)| d > 0.0)
                .collect();
            prop_assert_eq!(samples.len(), fit.anchors_used);
            let sse = |a: f64, b: f64| samples.iter().map(|&(d, z)| (a * d + b - z).powi(2)).sum::<f64>();
            let best = sse(fit.scale, fit.offset);
            for (da, db) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3), (1e-3, 1e-3), (-1e-3, -1e-3), (1e-3, -1e-3), (-1e-3, 1e-3)] {
                prop_assert!(sse(fit.scale + da, fit.offset + db) >= best);
            }
        }
    }

    #[test]
    fn raising_an_iou_never_rejects(
        detection in any::<bool>(),
        ious in prop::collection::vec(0.0..1.0f64, 0..8),
        bump in 0usize..8,
        by in 0.0..1.0f64,
        min_iou in 0.0..1.0f64,
    ) {
        let before = filter_samples(&[SampleRecord { name: "s".into(), detection, ious: ious.clone() }], min_iou);
        let mut raised = ious.clone();
        if let Some(x) = raised.get_mut(bump) {
            *x = (*x + by).min(1.0);
        }
        let after = filter_samples(&[SampleRecord { name: "s".into(), detection, ious: raised }], min_iou);
        prop_assert!(after.entries[0].worst_iou >= before.entries[0].worst_iou);
        if before.entries[0].verdict == Verdict::Keep {
            prop_assert_eq!(after.entries[0].verdict, Verdict::Keep);
        }
        prop_assert!((0.0..=1.0).contains(&after.entries[0].worst_iou));
    }
}

/// A room view with the left half of the image tagged foreground.
fn split_room() -> (SyntheticSequence, Mask) {
    let spec = SceneSpec::room(
        48,
        36,
        CameraPath::Static { eye: [1.0, -3.0, 1.7], target: [-1.0, 2.0, 1.2], up: [0.0, 0.0, 1.0] },
    );
    let seq = generate_scene(&spec, 1).unwrap();
    let mask = Grid::from_fn(48, 36, |u, _| u < 24);
    (seq, mask)
}

/// Predicted depth `(z − b)/a` per region, optionally with multiplicative
/// noise on the anchors' predicted depth, plus anchors on a sparse lattice.
fn distorted(
    seq: &SyntheticSequence,
    mask: &Mask,
    fg: (f64, f64),
    bg: (f64, f64),
    seed: u64,
    noise: f64,
) -> (DepthMap, Vec<SparseAnchor>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let f = &seq.frames[0];
    let pred = Grid::from_fn(48, 36, |u, v| {
        let z = f.points.get(u, v).z;
        let (a, b) = if *mask.get(u, v) { fg } else { bg };
        let d = (z - b) / a;
        d * (1.0 + noise * rng.random_range(-1.0..1.0))
    });
    let anchors = (0..36)
        .step_by(5)
        .flat_map(|v| (0..48).step_by(5).map(move |u| (u, v)))
        .map(|(u, v)| {
            let p = seq.poses[0].camera_to_world(f.points.get(u, v));
            SparseAnchor {
                u,
                v,
                x: p.x,
                y: p.y,
                z: p.z,
                region: if *mask.get(u, v) { Region::Foreground } else { Region::Background },
            }
        })
        .collect();
    (pred, anchors)
}

#[test]
fn metric_depth_gives_identity_fit() {
    let (seq, mask) = split_room();
    let (pred, anchors) = distorted(&seq, &mask, (1.0, 0.0), (1.0, 0.0), 0, 0.0);
    let out = align_depth(&pred, &anchors, &seq.poses[0], &mask).unwrap();
    for region in [Region::Foreground, Region::Background] {
        let fit = out.fit(region).as_ref().unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-9 && fit.offset.abs() < 1e-9);
    }
}

#[test]
fn affine_distortion_is_undone() {
    // d_pred = 0.5·z − 2  <=>  z = 2·d_pred + 4
    let (seq, mask) = split_room();
    let (pred, anchors) = distorted(&seq, &mask, (2.0, 4.0), (2.0, 4.0), 0, 0.0);
    let out = align_depth(&pred, &anchors, &seq.poses[0], &mask).unwrap();
    for region in [Region::Foreground, Region::Background] {
        let fit = out.fit(region).as_ref().unwrap();
        assert!((fit.scale - 2.0).abs() < 1e-9 && (fit.offset - 4.0).abs() < 1e-9);
    }
    let mut checked = 0;
    for (u, v, z) in out.corrected.iter_pixels() {
        // non-positive predictions are left uncorrected
        if *pred.get(u, v) > 0.0 {
            assert!((z - seq.frames[0].points.get(u, v).z).abs() < 1e-9);
            checked += 1;
        } else {
            assert!(z.is_nan());
        }
    }
    assert!(checked > 0);
}

#[test]
fn regions_fit_independently() {
    let (seq, mask) = split_room();
    let (pred, anchors) = distorted(&seq, &mask, (2.0, 0.0), (3.0, 0.0), 0, 0.0);
    let out = align_depth(&pred, &anchors, &seq.poses[0], &mask).unwrap();
    let fg = out.foreground.as_ref().unwrap();
    let bg = out.background.as_ref().unwrap();
    assert!((fg.scale - 2.0).abs() < 1e-9 && fg.offset.abs() < 1e-9);
    assert!((bg.scale - 3.0).abs() < 1e-9 && bg.offset.abs() < 1e-9);
}

#[test]
fn alignment_errors() {
    let (seq, mask) = split_room();
    let (pred, anchors) = distorted(&seq, &mask, (2.0, 0.0), (3.0, 0.0), 0, 0.0);
    let one_fg: Vec<SparseAnchor> = anchors
        .iter()
        .filter(|a| a.region == Region::Background)
        .chain(anchors.iter().find(|a| a.region == Region::Foreground))
        .copied()
        .collect();
    let out = align_depth(&pred, &one_fg, &seq.poses[0], &mask).unwrap();
    assert_eq!(
        out.foreground,
        Err(DataprepError::InsufficientAnchors { region: Region::Foreground, found: 1 })
    );
    assert!(out.background.is_ok());

    // mirror every anchor through the camera center
    let c = seq.poses[0].center();
    let behind: Vec<SparseAnchor> = anchors
        .iter()
        .map(|a| {
            let p = c + (c - a.point());
            SparseAnchor { x: p.x, y: p.y, z: p.z, ..*a }
        })
        .collect();
    assert!(matches!(
        align_depth(&pred, &behind, &seq.poses[0], &mask),
        Err(DataprepError::NoValidAnchors)
    ));
    let small = Grid::filled(4, 4, 1.0);
    assert!(matches!(
        align_depth(&small, &anchors, &seq.poses[0], &mask),
        Err(DataprepError::ResolutionMismatch)
    ));
}

#[test]
fn filter_examples() {
    let report = filter_samples(
        &[
            SampleRecord { name: "a".into(), detection: true, ious: vec![1.0, 1.0] },
            SampleRecord { name: "b".into(), detection: false, ious: vec![1.0] },
            SampleRecord { name: "c".into(), detection: true, ious: vec![0.9, 0.59, 0.8] },
            SampleRecord { name: "d".into(), detection: true, ious: vec![0.6] },
        ],
        0.6,
    );
    let verdicts: Vec<Verdict> = report.entries.iter().map(|e| e.verdict).collect();
    assert_eq!(
        verdicts,
        vec![
            Verdict::Keep,
            Verdict::Reject(RejectReason::NoDetection),
            Verdict::Reject(RejectReason::LowMaskIou),
            Verdict::Keep,
        ]
    );
    assert_eq!(report.entries[2].worst_iou, 0.59);
    assert_eq!(report.kept(), 2);
}

#[test]
fn triangulation_and_epipolar_gate() {
    let seq = generate_scene(&box_orbit(5.0, 2.0, 0.0, 40.0), 2).unwrap();
    let (a, b) = (&seq.poses[0], &seq.poses[1]);
    let f0 = &seq.frames[0];
    let mut pairs = Vec::new();
    for (u, v, p) in f0.points.iter_pixels().step_by(7) {
        if !*f0.point_valid.get(u, v) {
            continue;
        }
        let world = a.camera_to_world(p);
        let pb = b.intrinsics.project(&b.world_to_camera(&world));
        if !pb.in_frustum {
            continue;
        }
        let xa = (u as f64 + 0.5, v as f64 + 0.5);
        let got = triangulate_midpoint(&[
            Observation { pose: a, u: xa.0, v: xa.1 },
            Observation { pose: b, u: pb.u, v: pb.v },
        ])
        .unwrap();
        assert!((got - world).norm() < 1e-7 * (1.0 + world.coords.norm()));
        pairs.push((xa, (pb.u, pb.v)));
    }
    assert!(pairs.len() > 20);
    assert!(epipolar_gate(a, b, &pairs, 2.0).iter().all(|&ok| ok));
    let shifted: Vec<_> = pairs.iter().map(|&(xa, xb)| (xa, (xb.0, xb.1 + 25.0))).collect();
    let kept = epipolar_gate(a, b, &shifted, 2.0).iter().filter(|&&ok| ok).count();
    assert!(kept < shifted.len() / 4, "{kept} of {}", shifted.len());
    assert!(triangulate_midpoint(&[Observation { pose: a, u: 1.0, v: 1.0 }]).is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = box_orbit(5.0, 1.0, 0.0, 10.0);
    spec.boxes[0].max = [-2.0, 1.0, 1.0];
    assert!(matches!(generate_scene(&spec, 1), Err(DataprepError::InvalidSpec(_))));
    let spec = room_with_sphere([0.0, 0.0, 1.0], [0.0; 3], 0.0);
    assert!(matches!(generate_scene(&spec, 1), Err(DataprepError::InvalidSpec(_))));
}
