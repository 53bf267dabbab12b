//! File-based commands wiring the library together.
//!
//! A source directory holds `frames/*.png`, `depth/<stem>.pfm` (or a 16-bit
//! `.png` with sidecar), `masks/<stem>.png` marking dynamic pixels, and
//! `poses.json` with one pose per frame in frame-name order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{
    build_cache, cache_stats, render_cache, sample_indices, update_cache, Anchor, CacheBuildConfig, CacheError,
    CacheStats,
};
use crate::dataprep::{
    align_depth, consecutive_ious, epipolar_gate, filter_samples, generate_scene, triangulate_midpoint,
    DataprepError, FilterReport, LinearFit, Observation, Region, SampleRecord, SceneSpec, SparseAnchor,
    DEFAULT_EPIPOLAR_GATE_PX, DEFAULT_MIN_MASK_IOU,
};
use crate::geometry::{CameraPose, GeometryError};
use crate::grid::DepthMap;
use crate::io::{self, IoError};
use crate::scheduler::{denoiser_by_name, run_autoregressive, write_trace_csv, ScheduleConfig, SchedulerError};
use crate::seed::SeedStream;
use crate::warp::{fuse_coarse, psnr, psnr_masked, warp_dynamic, FrameBundle, WarpError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {message}", file.display())]
    Manifest { file: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for bad data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            _ => 3,
        }
    }

    fn manifest(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PipelineError::Manifest {
            file: file.into(),
            message: message.into(),
        }
    }
}

impl From<CacheError> for PipelineError {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::InvalidConfig(_) | CacheError::EmptyInput => PipelineError::Config(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<SchedulerError> for PipelineError {
    fn from(e: SchedulerError) -> Self {
        match e {
            SchedulerError::ShapeMismatch(_) => PipelineError::Data(e.to_string()),
            other => PipelineError::Config(other.to_string()),
        }
    }
}

impl From<DataprepError> for PipelineError {
    fn from(e: DataprepError) -> Self {
        match e {
            DataprepError::InvalidSpec(_) => PipelineError::Config(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<WarpError> for PipelineError {
    fn from(e: WarpError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

impl From<GeometryError> for PipelineError {
    fn from(e: GeometryError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

/// Reads a JSON config; unreadable or malformed files are config errors.
/// Relative paths inside the config are later resolved against its
/// directory with [`resolve`].
pub fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    io::read_json(path).map_err(|e| PipelineError::Config(e.to_string()))
}

/// `path` unchanged if absolute, else joined onto `base`.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// A source video loaded from disk.
#[derive(Debug, Clone)]
pub struct SourceVideo {
    /// Frame file stems in sorted order.
    pub names: Vec<String>,
    pub frames: Vec<FrameBundle>,
    pub poses: Vec<CameraPose>,
}

fn png_stems(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::manifest(dir, e.to_string()))?;
    let mut stems = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| PipelineError::manifest(dir, e.to_string()))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_string());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn load_source(dir: &Path) -> Result<SourceVideo, PipelineError> {
    let names = png_stems(&dir.join("frames"))?;
    if names.is_empty() {
        return Err(PipelineError::manifest(dir.join("frames"), "no PNG frames"));
    }
    let poses_path = dir.join("poses.json");
    if !poses_path.exists() {
        return Err(PipelineError::manifest(&poses_path, "missing pose file"));
    }
    let poses = io::read_poses(&poses_path)?;
    if poses.len() != names.len() {
        return Err(PipelineError::manifest(
            &poses_path,
            format!("{} poses for {} frames", poses.len(), names.len()),
        ));
    }
    let mut frames = Vec::with_capacity(names.len());
    for (name, pose) in names.iter().zip(&poses) {
        let rgb_path = dir.join("frames").join(format!("{name}.png"));
        let depth_path = ["pfm", "png"]
            .iter()
            .map(|ext| dir.join("depth").join(format!("{name}.{ext}")))
            .find(|p| p.exists())
            .ok_or_else(|| {
                PipelineError::manifest(dir.join("depth").join(format!("{name}.pfm")), "missing depth file")
            })?;
        let mask_path = dir.join("masks").join(format!("{name}.png"));
        if !mask_path.exists() {
            return Err(PipelineError::manifest(&mask_path, "missing dynamic mask"));
        }
        let rgb = io::read_rgb_png(&rgb_path)?;
        let depth = io::read_depth(&depth_path)?;
        let mask = io::read_mask_png(&mask_path)?;
        let k = pose.intrinsics;
        for (path, dims) in [(&rgb_path, rgb.dims()), (&depth_path, depth.dims()), (&mask_path, mask.dims())] {
            if dims != (k.width, k.height) {
                return Err(PipelineError::manifest(
                    path,
                    format!("size {}x{} differs from camera {}x{}", dims.0, dims.1, k.width, k.height),
                ));
            }
        }
        frames.push(FrameBundle::from_depth(rgb, &depth, mask, &k)?);
    }
    Ok(SourceVideo { names, frames, poses })
}

/// Writes a source directory readable by [`load_source`]. Depth is written
/// as PFM, with 0 for invalid pixels.
pub fn write_source(dir: &Path, video: &SourceVideo) -> Result<(), PipelineError> {
    for (name, frame) in video.names.iter().zip(&video.frames) {
        io::write_rgb_png(&dir.join("frames").join(format!("{name}.png")), &frame.rgb)?;
        io::write_mask_png(&dir.join("masks").join(format!("{name}.png")), &frame.dynamic_mask)?;
        let (w, h) = frame.dims();
        let depth = DepthMap::from_fn(w, h, |u, v| {
            if *frame.point_valid.get(u, v) {
                frame.points.get(u, v).z
            } else {
                0.0
            }
        });
        io::write_pfm(&dir.join("depth").join(format!("{name}.pfm")), &depth)?;
    }
    io::write_poses(&dir.join("poses.json"), &video.poses)?;
    Ok(())
}

/// Configuration shared by `coarse` and `cache-build`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Source directory.
    pub input: PathBuf,
    /// Target trajectory (`poses.json` format), one pose per source frame.
    /// Defaults to the source trajectory.
    #[serde(default)]
    pub targets: Option<PathBuf>,
    #[serde(default)]
    pub cache: CacheBuildConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn resolved(mut self, base: &Path) -> Self {
        self.input = resolve(base, &self.input);
        self.targets = self.targets.map(|t| resolve(base, &t));
        self.output = self.output.map(|o| resolve(base, &o));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseEntry {
    pub name: String,
    /// Fraction of pixels set in the written mask.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseManifest {
    pub cache_points: usize,
    pub sample_count: usize,
    pub frames: Vec<CoarseEntry>,
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Builds the cache, then for every target pose renders it, warps the
/// matching source frame's dynamic content and fuses the two. Writes
/// `coarse/`, `masks/`, `cache.ply` and `manifest.json` under `out`.
pub fn cmd_coarse(config: &PipelineConfig, out: &Path, threads: Option<usize>) -> Result<CoarseManifest, PipelineError> {
    let source = load_source(&config.input)?;
    let targets = match &config.targets {
        Some(path) => {
            let t = io::read_poses(path)?;
            if t.len() != source.frames.len() {
                return Err(PipelineError::manifest(
                    path,
                    format!("{} target poses for {} source frames", t.len(), source.frames.len()),
                ));
            }
            t
        }
        None => source.poses.clone(),
    };
    let cache = build_cache(&source.frames, &source.poses, &config.cache)?;
    io::write_ply(&out.join("cache.ply"), &cache)?;

    let pool = thread_pool(threads)?;
    let frames = pool.install(|| {
        (0..targets.len())
            .into_par_iter()
            .map(|i| -> Result<CoarseEntry, PipelineError> {
                let rendered = render_cache(&cache, &targets[i]);
                let dynamic = warp_dynamic(&source.frames[i], &source.poses[i], &targets[i])?;
                let coarse = fuse_coarse(&dynamic, &rendered)?;
                let name = &source.names[i];
                io::write_rgb_png(&out.join("coarse").join(format!("{name}.png")), &coarse.rgb)?;
                io::write_mask_png(&out.join("masks").join(format!("{name}.png")), &coarse.mask)?;
                Ok(CoarseEntry {
                    name: name.clone(),
                    coverage: coarse.mask.coverage(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let manifest = CoarseManifest {
        cache_points: cache.len(),
        sample_count: config.cache.sample_count,
        frames,
    };
    io::write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Builds the cache from the source video; writes `cache.ply` and
/// `stats.json`.
pub fn cmd_cache_build(config: &PipelineConfig, out: &Path) -> Result<CacheStats, PipelineError> {
    let source = load_source(&config.input)?;
    let cache = build_cache(&source.frames, &source.poses, &config.cache)?;
    io::write_ply(&out.join("cache.ply"), &cache)?;
    let stats = cache_stats(&cache);
    io::write_json(&out.join("stats.json"), &stats)?;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheUpdateConfig {
    /// Existing cache (PLY).
    pub cache: PathBuf,
    /// Source-layout directory holding the newly generated segment, with
    /// poses and depth in the independently estimated reconstruction.
    pub segment: PathBuf,
    /// JSON `{"src": [[x,y,z],...], "dst": [[x,y,z],...]}` mapping
    /// reconstruction points onto cache points.
    pub correspondences: PathBuf,
    /// Number of evenly spaced anchor frames; all frames when absent.
    #[serde(default)]
    pub anchor_count: Option<usize>,
    /// Added to anchor frame indices for provenance.
    #[serde(default)]
    pub frame_offset: i32,
    #[serde(default = "default_round")]
    pub round: i32,
    #[serde(default = "default_dilation")]
    pub visibility_dilation: usize,
}

fn default_round() -> i32 {
    1
}

fn default_dilation() -> usize {
    CacheBuildConfig::default().visibility_dilation
}

impl CacheUpdateConfig {
    pub fn resolved(mut self, base: &Path) -> Self {
        self.cache = resolve(base, &self.cache);
        self.segment = resolve(base, &self.segment);
        self.correspondences = resolve(base, &self.correspondences);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Correspondences {
    pub src: Vec<[f64; 3]>,
    pub dst: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub scale: f64,
    /// Row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub alignment_rms: f64,
    pub anchor_frames: Vec<usize>,
    pub appended: usize,
    pub cache_points: usize,
}

/// Aligns anchors of a new segment to the cache and merges their gaps;
/// writes the grown `cache.ply` and `update.json`.
pub fn cmd_cache_update(config: &CacheUpdateConfig, out: &Path) -> Result<UpdateReport, PipelineError> {
    let mut cache = io::read_ply(&config.cache)?;
    let segment = load_source(&config.segment)?;
    let corr: Correspondences = io::read_json(&config.correspondences)?;
    let to_points = |v: &[[f64; 3]]| v.iter().map(|p| Point3::from(*p)).collect::<Vec<_>>();
    let picks = match config.anchor_count {
        Some(c) => sample_indices(segment.frames.len(), c)?,
        None => (0..segment.frames.len()).collect(),
    };
    let anchors: Vec<Anchor> = picks
        .iter()
        .map(|&i| Anchor {
            frame: segment.frames[i].clone(),
            pose: segment.poses[i],
            frame_index: (i as i32 + config.frame_offset).max(0) as usize,
        })
        .collect();
    let outcome = update_cache(
        &mut cache,
        &anchors,
        &to_points(&corr.src),
        &to_points(&corr.dst),
        config.round,
        config.visibility_dilation,
    )
    .map_err(|e| match e {
        CacheError::Geometry(g) => PipelineError::manifest(&config.correspondences, g.to_string()),
        other => other.into(),
    })?;
    io::write_ply(&out.join("cache.ply"), &cache)?;
    let r = outcome.alignment.rotation;
    let report = UpdateReport {
        scale: outcome.alignment.scale,
        rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
        translation: outcome.alignment.translation.into(),
        alignment_rms: outcome.alignment_rms,
        anchor_frames: picks,
        appended: outcome.appended,
        cache_points: cache.len(),
    };
    io::write_json(&out.join("update.json"), &report)?;
    Ok(report)
}

/// Statistics of a cache file.
pub fn cmd_cache_stats(cache: &Path) -> Result<CacheStats, PipelineError> {
    Ok(cache_stats(&io::read_ply(cache)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatentDump {
    pub denoiser: String,
    pub frames: usize,
    pub channels: usize,
    pub segments: Vec<crate::scheduler::SegmentSpan>,
    /// Frame-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleSummary {
    pub segments: usize,
    pub steps: usize,
    pub trace_rows: usize,
    pub evaluations: usize,
}

/// Runs the autoregressive schedule with a stub denoiser; writes
/// `trace.csv` and `latents.json`.
pub fn cmd_schedule(config: &ScheduleConfig, out: &Path) -> Result<ScheduleSummary, PipelineError> {
    let plan = config.plan()?;
    let schedule = config.schedule()?;
    let denoiser = denoiser_by_name(&config.denoiser, config.t_max)?;
    let run = run_autoregressive(
        denoiser.as_ref(),
        config.total_frames,
        config.channels,
        &plan,
        &schedule,
        &SeedStream::new(config.seed),
    )?;
    let trace_path = out.join("trace.csv");
    if let Some(dir) = trace_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let write_trace = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(&trace_path)?);
        write_trace_csv(&run.trace, &mut w)?;
        w.flush()
    };
    write_trace().map_err(|source| IoError::Io {
        path: trace_path.clone(),
        source,
    })?;
    io::write_json(
        &out.join("latents.json"),
        &LatentDump {
            denoiser: denoiser.name().to_string(),
            frames: run.latents.frames(),
            channels: run.latents.channels(),
            segments: run.segments.clone(),
            values: run.latents.values().to_vec(),
        },
    )?;
    Ok(ScheduleSummary {
        segments: run.segments.len(),
        steps: schedule.steps(),
        trace_rows: run.trace.len(),
        evaluations: run.trace.iter().map(|r| r.evaluations).sum(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub reference: PathBuf,
    pub candidate: PathBuf,
    /// Optional mask directory with one PNG per frame; PSNR is then
    /// computed on set pixels only.
    #[serde(default)]
    pub masks: Option<PathBuf>,
}

impl MetricsConfig {
    pub fn resolved(mut self, base: &Path) -> Self {
        self.reference = resolve(base, &self.reference);
        self.candidate = resolve(base, &self.candidate);
        self.masks = self.masks.map(|m| resolve(base, &m));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(String, f64)>,
    pub mean: f64,
}

/// Per-frame PSNR between same-named PNGs; writes `psnr.csv` with a final
/// `mean` row. Identical frames give `inf`.
pub fn cmd_metrics(config: &MetricsConfig, out: &Path) -> Result<MetricsTable, PipelineError> {
    let names = png_stems(&config.reference)?;
    let candidates = png_stems(&config.candidate)?;
    if names.len() != candidates.len() {
        return Err(PipelineError::manifest(
            &config.candidate,
            format!("{} candidate frames for {} reference frames", candidates.len(), names.len()),
        ));
    }
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        let file = format!("{name}.png");
        let cand_path = config.candidate.join(&file);
        if !cand_path.exists() {
            return Err(PipelineError::manifest(cand_path, "no matching candidate frame"));
        }
        let reference = io::read_rgb_png(&config.reference.join(&file))?;
        let candidate = io::read_rgb_png(&cand_path)?;
        let value = match &config.masks {
            Some(dir) => {
                let mask_path = dir.join(&file);
                if !mask_path.exists() {
                    return Err(PipelineError::manifest(mask_path, "missing mask"));
                }
                psnr_masked(&reference, &candidate, &io::read_mask_png(&mask_path)?)
            }
            None => psnr(&reference, &candidate),
        }
        .map_err(|e| PipelineError::manifest(&cand_path, e.to_string()))?;
        rows.push((name.clone(), value));
    }
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / rows.len().max(1) as f64;
    let csv_path = out.join("psnr.csv");
    let mut csv = String::from("frame,psnr\n");
    for (name, value) in &rows {
        csv.push_str(&format!("{name},{value}\n"));
    }
    csv.push_str(&format!("mean,{mean}\n"));
    std::fs::create_dir_all(out).map_err(|e| IoError::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    std::fs::write(&csv_path, csv).map_err(|e| IoError::Io {
        path: csv_path,
        source: e,
    })?;
    Ok(MetricsTable { rows, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSceneConfig {
    pub frames: usize,
    pub scene: SceneSpec,
}

/// Ray-casts a synthetic scene into a source directory plus
/// `ground_truth.ply` (every static observation).
pub fn cmd_gen_scene(config: &GenSceneConfig, out: &Path) -> Result<SourceVideo, PipelineError> {
    let seq = generate_scene(&config.scene, config.frames)?;
    let video = SourceVideo {
        names: (0..config.frames).map(|i| format!("{i:05}")).collect(),
        frames: seq.frames,
        poses: seq.poses,
    };
    write_source(out, &video)?;
    io::write_ply(&out.join("ground_truth.ply"), &seq.ground_truth)?;
    Ok(video)
}

/// Two-view matches `(u, v)` in the aligned frame and `(u2, v2)` in a
/// second view, in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub u: f64,
    pub v: f64,
    pub u2: f64,
    pub v2: f64,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchesConfig {
    /// JSON lines of [`Match`].
    pub file: PathBuf,
    /// Pose of the second view.
    pub pose: PathBuf,
    #[serde(default = "default_gate")]
    pub gate_px: f64,
}

fn default_gate() -> f64 {
    DEFAULT_EPIPOLAR_GATE_PX
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignDepthConfig {
    /// Predicted depth, `.pfm` or 16-bit `.png`.
    pub depth: PathBuf,
    /// Pose of the frame, single-pose JSON.
    pub pose: PathBuf,
    /// Foreground mask PNG.
    pub region_mask: PathBuf,
    /// Precomputed anchors (JSON lines).
    #[serde(default)]
    pub anchors: Option<PathBuf>,
    /// Matches triangulated into extra anchors after epipolar gating.
    #[serde(default)]
    pub matches: Option<MatchesConfig>,
}

impl AlignDepthConfig {
    pub fn resolved(mut self, base: &Path) -> Self {
        self.depth = resolve(base, &self.depth);
        self.pose = resolve(base, &self.pose);
        self.region_mask = resolve(base, &self.region_mask);
        self.anchors = self.anchors.map(|a| resolve(base, &a));
        if let Some(m) = self.matches.as_mut() {
            m.file = resolve(base, &m.file);
            m.pose = resolve(base, &m.pose);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum FitReport {
    Fit(LinearFit),
    Failed { error: String },
}

impl From<&Result<LinearFit, DataprepError>> for FitReport {
    fn from(r: &Result<LinearFit, DataprepError>) -> Self {
        match r {
            Ok(f) => FitReport::Fit(*f),
            Err(e) => FitReport::Failed { error: e.to_string() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignReport {
    pub anchors: usize,
    pub matches_gated_out: usize,
    pub foreground: FitReport,
    pub background: FitReport,
}

/// Fits per-region affine depth corrections; writes `depth.pfm` (NaN where
/// no fit applies) and `alignment.json`.
pub fn cmd_align_depth(config: &AlignDepthConfig, out: &Path) -> Result<AlignReport, PipelineError> {
    if config.anchors.is_none() && config.matches.is_none() {
        return Err(PipelineError::Config("align-depth needs anchors or matches".into()));
    }
    let predicted = io::read_depth(&config.depth)?;
    let pose: CameraPose = io::read_json(&config.pose)?;
    let region_mask = io::read_mask_png(&config.region_mask)?;
    let mut anchors = match &config.anchors {
        Some(path) => io::read_anchors(path)?,
        None => Vec::new(),
    };
    let mut gated_out = 0;
    if let Some(m) = &config.matches {
        let second: CameraPose = io::read_json(&m.pose)?;
        let matches: Vec<Match> = io::read_json_lines(&m.file)?;
        let pairs: Vec<_> = matches.iter().map(|m| ((m.u, m.v), (m.u2, m.v2))).collect();
        let keep = epipolar_gate(&pose, &second, &pairs, m.gate_px);
        let k = pose.intrinsics;
        for (mt, ok) in matches.iter().zip(keep) {
            if !ok {
                gated_out += 1;
                continue;
            }
            let x = triangulate_midpoint(&[
                Observation { pose: &pose, u: mt.u, v: mt.v },
                Observation { pose: &second, u: mt.u2, v: mt.v2 },
            ])
            .map_err(|e| PipelineError::manifest(&m.file, e.to_string()))?;
            let (u, v) = (mt.u.floor(), mt.v.floor());
            if u >= 0.0 && v >= 0.0 && (u as usize) < k.width && (v as usize) < k.height {
                anchors.push(SparseAnchor {
                    u: u as usize,
                    v: v as usize,
                    x: x.x,
                    y: x.y,
                    z: x.z,
                    region: mt.region,
                });
            }
        }
    }
    let aligned = align_depth(&predicted, &anchors, &pose, &region_mask)?;
    io::write_pfm(&out.join("depth.pfm"), &aligned.corrected)?;
    let report = AlignReport {
        anchors: anchors.len(),
        matches_gated_out: gated_out,
        foreground: (&aligned.foreground).into(),
        background: (&aligned.background).into(),
    };
    io::write_json(&out.join("alignment.json"), &report)?;
    Ok(report)
}

/// A filter manifest sample. IoUs are given directly or computed from a
/// directory of coarse-frame mask PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSample {
    pub name: String,
    pub detection: bool,
    #[serde(default)]
    pub ious: Option<Vec<f64>>,
    #[serde(default)]
    pub masks: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterManifest {
    pub samples: Vec<ManifestSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub manifest: PathBuf,
    #[serde(default = "default_min_iou")]
    pub min_iou: f64,
}

fn default_min_iou() -> f64 {
    DEFAULT_MIN_MASK_IOU
}

/// Applies the rejection rules to a manifest; writes `filter.json`.
pub fn cmd_filter(config: &FilterConfig, base: &Path, out: &Path) -> Result<FilterReport, PipelineError> {
    let manifest_path = resolve(base, &config.manifest);
    let manifest: FilterManifest = io::read_json(&manifest_path)?;
    let manifest_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::with_capacity(manifest.samples.len());
    for s in &manifest.samples {
        let ious = match (&s.ious, &s.masks) {
            (Some(ious), _) => ious.clone(),
            (None, Some(dir)) => {
                let dir = resolve(manifest_dir, dir);
                let masks = png_stems(&dir)?
                    .iter()
                    .map(|n| io::read_mask_png(&dir.join(format!("{n}.png"))))
                    .collect::<Result<Vec<_>, _>>()?;
                consecutive_ious(&masks).map_err(|e| PipelineError::manifest(&dir, e.to_string()))?
            }
            (None, None) => Vec::new(),
        };
        records.push(SampleRecord {
            name: s.name.clone(),
            detection: s.detection,
            ious,
        });
    }
    let report = filter_samples(&records, config.min_iou);
    io::write_json(&out.join("filter.json"), &report)?;
    Ok(report)
}

/// Mask coverage recounted from the PNGs written by [`cmd_coarse`].
pub fn recount_coverage(out: &Path) -> Result<BTreeMap<String, f64>, PipelineError> {
    let dir = out.join("masks");
    let mut map = BTreeMap::new();
    for name in png_stems(&dir)? {
        let mask = io::read_mask_png(&dir.join(format!("{name}.png")))?;
        map.insert(name, mask.coverage());
    }
    Ok(map)
}
