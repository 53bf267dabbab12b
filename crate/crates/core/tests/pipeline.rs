use std::fs;
use std::path::{Path, PathBuf};

use hybridwarp::cache::CacheBuildConfig;
use hybridwarp::dataprep::scene::{CameraPath, SphereSpec};
use hybridwarp::dataprep::{generate_scene, SceneSpec};
use hybridwarp::grid::Grid;
use hybridwarp::io;
use hybridwarp::pipeline::{
    cmd_cache_build, cmd_cache_stats, cmd_coarse, cmd_gen_scene, cmd_metrics, cmd_schedule, load_source,
    recount_coverage, write_source, GenSceneConfig, MetricsConfig, PipelineConfig, PipelineError, SourceVideo,
};
use hybridwarp::scheduler::ScheduleConfig;
use tempfile::TempDir;

fn orbit_scene(frames: usize, start: f64, end: f64) -> GenSceneConfig {
    GenSceneConfig {
        frames,
        scene: SceneSpec {
            sphere: Some(SphereSpec {
                center: [1.5, 1.0, 1.2],
                velocity: [-0.1, 0.0, 0.0],
                radius: 0.5,
                color: [250, 0, 250],
            }),
            ..SceneSpec::room(
                64,
                48,
                CameraPath::Orbit {
                    center: [0.0, 0.0, 0.0],
                    radius: 0.8,
                    height: 1.6,
                    start_deg: start,
                    end_deg: end,
                    target: [0.0, 0.0, 1.4],
                    up: [0.0, 0.0, 1.0],
                },
            )
        },
    }
}

fn pipeline_config(input: &Path, l: usize) -> PipelineConfig {
    dilated_config(input, l, 1)
}

fn dilated_config(input: &Path, l: usize, dilation: usize) -> PipelineConfig {
    PipelineConfig {
        input: input.to_path_buf(),
        targets: None,
        cache: CacheBuildConfig { sample_count: l, visibility_dilation: dilation },
        output: None,
    }
}

fn dir_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn missing_depth_names_the_file() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    cmd_gen_scene(&orbit_scene(3, 0.0, 30.0), &src).unwrap();
    fs::remove_file(src.join("depth/00001.pfm")).unwrap();
    let err = load_source(&src).unwrap_err();
    match &err {
        PipelineError::Manifest { file, .. } => assert!(file.ends_with("depth/00001.pfm"), "{file:?}"),
        e => panic!("unexpected {e:?}"),
    }
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("00001.pfm"));
}

#[test]
fn pose_count_mismatch_is_a_manifest_error() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let video = cmd_gen_scene(&orbit_scene(3, 0.0, 30.0), &src).unwrap();
    io::write_poses(&src.join("poses.json"), &video.poses[..2]).unwrap();
    match load_source(&src) {
        Err(PipelineError::Manifest { file, .. }) => assert!(file.ends_with("poses.json")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn source_round_trips_through_disk() {
    let tmp = TempDir::new().unwrap();
    let video = cmd_gen_scene(&orbit_scene(2, 0.0, 20.0), tmp.path()).unwrap();
    let back = load_source(tmp.path()).unwrap();
    assert_eq!(back.names, vec!["00000", "00001"]);
    assert_eq!(back.poses, video.poses);
    for (a, b) in back.frames.iter().zip(&video.frames) {
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.dynamic_mask, b.dynamic_mask);
        assert_eq!(a.point_valid, b.point_valid);
        // PFM stores f32
        for (p, q) in a.points.as_slice().iter().zip(b.points.as_slice()) {
            assert!((p - q).norm() <= 1e-6 * (1.0 + q.coords.norm()));
        }
    }
}

#[test]
fn coarse_is_bitwise_deterministic() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    cmd_gen_scene(&orbit_scene(5, 0.0, 60.0), &src).unwrap();
    let cfg = pipeline_config(&src, 3);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let ma = cmd_coarse(&cfg, &a, Some(1)).unwrap();
    let mb = cmd_coarse(&cfg, &b, Some(4)).unwrap();
    assert_eq!(ma, mb);
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn manifest_coverage_matches_written_masks() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    cmd_gen_scene(&orbit_scene(4, 10.0, 70.0), &src).unwrap();
    let out = tmp.path().join("out");
    let manifest = cmd_coarse(&pipeline_config(&src, 2), &out, None).unwrap();
    let recount = recount_coverage(&out).unwrap();
    assert_eq!(recount.len(), manifest.frames.len());
    for e in &manifest.frames {
        assert_eq!(recount[&e.name], e.coverage);
    }
    let written: hybridwarp::pipeline::CoarseManifest = io::read_json(&out.join("manifest.json")).unwrap();
    assert_eq!(written, manifest);
}

/// A camera sliding along a wall in whole-pixel steps. Views overlap without
/// resampling holes, and with no dilation the cache covers exactly the union
/// of the sampled views.
fn sliding_source(dir: &Path, frames: usize, shift_px: usize) {
    let (w, h, depth) = (64, 48, 4.0);
    let step = shift_px as f64 * depth / w as f64;
    let mut video = SourceVideo { names: Vec::new(), frames: Vec::new(), poses: Vec::new() };
    for i in 0..frames {
        let x = i as f64 * step;
        let mut spec = SceneSpec::fronto_parallel_plane(w, h, depth);
        spec.planes[0].origin = [-20.0, depth, -10.0];
        spec.planes[0].axis_u = [80.0, 0.0, 0.0];
        spec.planes[0].axis_v = [0.0, 0.0, 20.0];
        spec.camera = CameraPath::Static { eye: [x, 0.0, 0.0], target: [x, 1.0, 0.0], up: [0.0, 0.0, 1.0] };
        let seq = generate_scene(&spec, 1).unwrap();
        video.names.push(format!("{i:05}"));
        video.frames.extend(seq.frames);
        video.poses.extend(seq.poses);
    }
    write_source(dir, &video).unwrap();
}

#[test]
fn coverage_grows_with_sample_count() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    sliding_source(&src, 9, 16);
    let mut previous: Option<Vec<f64>> = None;
    let mut means = Vec::new();
    for l in 1..=5 {
        let out = tmp.path().join(format!("l{l}"));
        let m = cmd_coarse(&dilated_config(&src, l, 0), &out, None).unwrap();
        let cov: Vec<f64> = m.frames.iter().map(|e| e.coverage).collect();
        if let Some(prev) = &previous {
            for (i, (c, p)) in cov.iter().zip(prev).enumerate() {
                assert!(c >= p, "L={l} frame {i}: {c} < {p}");
            }
        }
        means.push(cov.iter().sum::<f64>() / cov.len() as f64);
        previous = Some(cov);
    }
    // the fixture is not saturated from the start
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    assert_eq!(means[4], 1.0);
}

#[test]
fn static_scene_coarse_equals_source_on_mask() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    let cfg = GenSceneConfig {
        frames: 3,
        scene: SceneSpec::room(
            48,
            36,
            CameraPath::Static { eye: [0.5, -2.0, 1.6], target: [0.0, 3.0, 1.5], up: [0.0, 0.0, 1.0] },
        ),
    };
    cmd_gen_scene(&cfg, &src).unwrap();
    let out = tmp.path().join("out");
    cmd_coarse(&pipeline_config(&src, 3), &out, None).unwrap();
    let table = cmd_metrics(
        &MetricsConfig {
            reference: src.join("frames"),
            candidate: out.join("coarse"),
            masks: Some(out.join("masks")),
        },
        &out,
    )
    .unwrap();
    assert_eq!(table.rows.len(), 3);
    assert!(table.rows.iter().all(|(_, p)| *p == f64::INFINITY));
    assert_eq!(table.mean, f64::INFINITY);
}

#[test]
fn cache_build_and_stats_agree() {
    let tmp = TempDir::new().unwrap();
    let src = tmp.path().join("src");
    cmd_gen_scene(&orbit_scene(5, 0.0, 90.0), &src).unwrap();
    let out = tmp.path().join("out");
    let stats = cmd_cache_build(&pipeline_config(&src, 5), &out).unwrap();
    let reread = cmd_cache_stats(&out.join("cache.ply")).unwrap();
    assert_eq!(stats.count, reread.count);
    assert_eq!(stats.per_round, reread.per_round);
    assert_eq!(stats.per_round.values().sum::<usize>(), stats.count);
    // the PLY stores single-precision positions
    let ((lo, hi), (rlo, rhi)) = (stats.bbox.unwrap(), reread.bbox.unwrap());
    for k in 0..3 {
        assert!((lo[k] - rlo[k]).abs() < 1e-6 && (hi[k] - rhi[k]).abs() < 1e-6);
    }
}

fn write_frames(dir: &Path, frames: &[[u8; 3]]) {
    for (i, c) in frames.iter().enumerate() {
        io::write_rgb_png(&dir.join(format!("{i:03}.png")), &Grid::filled(8, 6, *c)).unwrap();
    }
}

#[test]
fn metrics_examples() {
    let tmp = TempDir::new().unwrap();
    let (r, c) = (tmp.path().join("ref"), tmp.path().join("cand"));
    write_frames(&r, &[[10, 10, 10], [20, 20, 20], [30, 30, 30]]);
    write_frames(&c, &[[10, 10, 10], [36, 36, 36], [30, 30, 30]]);
    let cfg = MetricsConfig { reference: r.clone(), candidate: c.clone(), masks: None };
    let t = cmd_metrics(&cfg, tmp.path()).unwrap();
    let finite: Vec<bool> = t.rows.iter().map(|(_, p)| p.is_finite()).collect();
    assert_eq!(finite, vec![false, true, false]);
    assert!((t.rows[1].1 - 10.0 * (255.0f64 * 255.0 / 256.0).log10()).abs() < 1e-9);
    let csv = fs::read_to_string(tmp.path().join("psnr.csv")).unwrap();
    assert!(csv.starts_with("frame,psnr\n"));
    assert!(csv.trim_end().lines().last().unwrap().starts_with("mean,"));

    fs::remove_file(c.join("002.png")).unwrap();
    assert!(matches!(cmd_metrics(&cfg, tmp.path()), Err(PipelineError::Manifest { .. })));
}

#[test]
fn masked_psnr_ignores_corruption_outside_mask() {
    let tmp = TempDir::new().unwrap();
    let (r, c, m) = (tmp.path().join("ref"), tmp.path().join("cand"), tmp.path().join("masks"));
    let reference = Grid::from_fn(16, 8, |u, v| [(u * 13) as u8, (v * 29) as u8, 77]);
    let mut corrupted = reference.clone();
    for v in 0..8 {
        for u in 0..8 {
            corrupted.set(u, v, [255, 0, 0]);
        }
        // a little noise inside the kept half too
        let px = *corrupted.get(12, v);
        corrupted.set(12, v, [px[0].wrapping_add(3), px[1], px[2]]);
    }
    io::write_rgb_png(&r.join("0.png"), &reference).unwrap();
    io::write_rgb_png(&c.join("0.png"), &corrupted).unwrap();
    io::write_mask_png(&m.join("0.png"), &Grid::from_fn(16, 8, |u, _| u >= 8)).unwrap();
    let plain = cmd_metrics(&MetricsConfig { reference: r.clone(), candidate: c.clone(), masks: None }, tmp.path()).unwrap();
    let masked = cmd_metrics(&MetricsConfig { reference: r, candidate: c, masks: Some(m) }, tmp.path()).unwrap();
    assert!(masked.rows[0].1.is_finite());
    assert!(masked.rows[0].1 > plain.rows[0].1);
}

fn schedule_config(delta_t: usize, w: f64) -> ScheduleConfig {
    serde_json::from_value(serde_json::json!({
        "steps": 10, "t_max": 1000.0, "T": 20, "T_star": 21, "delta_t": delta_t, "w": w, "seed": 5,
        "total_frames": 81, "channels": 3, "denoiser": "linear"
    }))
    .unwrap()
}

fn trace_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn schedule_examples() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("a");
    let s = cmd_schedule(&schedule_config(1, 2.0), &out).unwrap();
    assert_eq!(s.segments, 3);
    assert_eq!(s.trace_rows, 30);
    let rows = trace_rows(&out);
    let segments: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(segments.into_iter().collect::<Vec<_>>(), vec!["0", "1", "2"]);
    let dump: serde_json::Value = io::read_json(&out.join("latents.json")).unwrap();
    assert_eq!(dump["values"].as_array().unwrap().len(), 81 * 3);

    let out = tmp.path().join("b");
    cmd_schedule(&schedule_config(0, 2.0), &out).unwrap();
    assert!(trace_rows(&out).iter().all(|r| r[2] == r[3]));

    let out = tmp.path().join("c");
    let s = cmd_schedule(&schedule_config(2, 1.0), &out).unwrap();
    assert_eq!(s.evaluations, s.trace_rows);
    assert!(trace_rows(&out).iter().all(|r| r[5] == "1"));
}

#[test]
fn schedule_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_schedule(&schedule_config(1, 2.0), &a).unwrap();
    cmd_schedule(&schedule_config(1, 2.0), &b).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
}

#[test]
fn invalid_schedule_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = schedule_config(1, 2.0);
    cfg.steps = 0;
    let err = cmd_schedule(&cfg, tmp.path()).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    let mut cfg = schedule_config(1, 2.0);
    cfg.denoiser = "unet".into();
    assert_eq!(cmd_schedule(&cfg, tmp.path()).unwrap_err().exit_code(), 2);
}
