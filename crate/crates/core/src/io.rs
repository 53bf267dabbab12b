//! File formats: 8-bit RGB and mask PNGs, PFM and 16-bit PNG depth, pose
//! lists, binary PLY caches and JSON-lines anchors.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ColorType, ImageFormat};
use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Provenance, WorldCache};
use crate::dataprep::SparseAnchor;
use crate::geometry::CameraPose;
use crate::grid::{DepthMap, Grid, Mask, RgbImage};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. }
            | IoError::Image { path, .. }
            | IoError::Json { path, .. }
            | IoError::Format { path, .. } => path,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::io(path, e))
}

fn save_png(path: &Path, bytes: &[u8], w: usize, h: usize, color: ColorType) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    image::save_buffer_with_format(path, bytes, w as u32, h as u32, color, ImageFormat::Png).map_err(|source| {
        IoError::Image {
            path: path.to_path_buf(),
            source,
        }
    })
}

fn load_image(path: &Path) -> Result<image::DynamicImage, IoError> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => IoError::io(path, e),
        source => IoError::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    let bytes: Vec<u8> = img.as_slice().iter().flatten().copied().collect();
    save_png(path, &bytes, img.width(), img.height(), ColorType::Rgb8)
}

/// Reads any PNG as 8-bit RGB.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage, IoError> {
    let img = load_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0).collect();
    Ok(Grid::from_vec(w, h, data).expect("decoded buffer matches dimensions"))
}

/// Writes a mask as 8-bit grayscale, 255 = true.
pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<(), IoError> {
    let bytes: Vec<u8> = mask.as_slice().iter().map(|&b| if b { 255 } else { 0 }).collect();
    save_png(path, &bytes, mask.width(), mask.height(), ColorType::L8)
}

/// Reads a mask PNG; a pixel is true when any color channel is nonzero.
pub fn read_mask_png(path: &Path) -> Result<Mask, IoError> {
    let img = load_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| p.0.iter().any(|&c| c != 0)).collect();
    Ok(Grid::from_vec(w, h, data).expect("decoded buffer matches dimensions"))
}

/// Writes a single-channel little-endian PFM. Rows are stored bottom to top.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let mut out = create(path)?;
    let (w, h) = depth.dims();
    let mut buf = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    buf.reserve(w * h * 4);
    for v in (0..h).rev() {
        for u in 0..w {
            buf.extend_from_slice(&(*depth.get(u, v) as f32).to_le_bytes());
        }
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| IoError::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap, IoError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| IoError::io(path, e))?;
    // header tokens: magic, width, height, scale
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String, IoError> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(IoError::format(path, "truncated PFM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    if magic != "Pf" {
        return Err(IoError::format(path, format!("expected single-channel PFM, found magic {magic:?}")));
    }
    let parse = |s: String| s.parse::<usize>().map_err(|_| IoError::format(path, "bad PFM dimensions"));
    let w = parse(token(&mut pos)?)?;
    let h = parse(token(&mut pos)?)?;
    let scale: f64 = token(&mut pos)?
        .parse()
        .map_err(|_| IoError::format(path, "bad PFM scale"))?;
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() != w * h * 4 {
        return Err(IoError::format(
            path,
            format!("expected {} data bytes, found {}", w * h * 4, data.len()),
        ));
    }
    let little = scale < 0.0;
    let mut values = vec![0.0; w * h];
    for (i, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let x = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (u, row) = (i % w, i / w);
        values[(h - 1 - row) * w + u] = x as f64;
    }
    Ok(Grid::from_vec(w, h, values).expect("length checked"))
}

/// Sidecar for 16-bit PNG depth: `depth = value · scale`, value 0 = invalid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScale {
    pub scale: f64,
}

/// Sidecar path for a 16-bit depth PNG: `<file>.json`.
pub fn depth_sidecar_path(png: &Path) -> PathBuf {
    let mut s = png.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Quantizes depth to `round(depth / scale)`, clamped to 1..=65535. Invalid
/// depths are written as 0.
pub fn write_depth_png16(path: &Path, depth: &DepthMap, scale: f64) -> Result<(), IoError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(IoError::format(path, format!("depth scale must be positive, got {scale}")));
    }
    let bytes: Vec<u8> = depth
        .as_slice()
        .iter()
        .flat_map(|&z| {
            let q = if z.is_finite() && z > 0.0 {
                (z / scale).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            };
            // the encoder takes 16-bit samples in native byte order
            q.to_ne_bytes()
        })
        .collect();
    save_png(path, &bytes, depth.width(), depth.height(), ColorType::L16)?;
    write_json(&depth_sidecar_path(path), &DepthScale { scale })
}

pub fn read_depth_png16(path: &Path) -> Result<DepthMap, IoError> {
    let DepthScale { scale } = read_json(&depth_sidecar_path(path))?;
    let img = match load_image(path)? {
        image::DynamicImage::ImageLuma16(img) => img,
        _ => return Err(IoError::format(path, "expected a 16-bit grayscale PNG")),
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| if p.0[0] == 0 { 0.0 } else { p.0[0] as f64 * scale })
        .collect();
    Ok(Grid::from_vec(w, h, data).expect("decoded buffer matches dimensions"))
}

/// Reads `.pfm` or 16-bit `.png` depth by extension.
pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pfm") => read_pfm(path),
        Some("png") => read_depth_png16(path),
        _ => Err(IoError::format(path, "depth must be .pfm or .png")),
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    serde_json::from_reader(open(path)?).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| IoError::io(path, e))
}

pub fn read_poses(path: &Path) -> Result<Vec<CameraPose>, IoError> {
    read_json(path)
}

pub fn write_poses(path: &Path, poses: &[CameraPose]) -> Result<(), IoError> {
    write_json(path, poses)
}

/// One JSON object per non-blank line.
pub fn read_json_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            IoError::format(path, format!("line {}: {e}", i + 1))
        })?);
    }
    Ok(out)
}

pub fn read_anchors(path: &Path) -> Result<Vec<SparseAnchor>, IoError> {
    read_json_lines(path)
}

pub fn write_anchors(path: &Path, anchors: &[SparseAnchor]) -> Result<(), IoError> {
    let mut out = create(path)?;
    for a in anchors {
        let line = serde_json::to_string(a).expect("anchors serialize");
        writeln!(out, "{line}").map_err(|e| IoError::io(path, e))?;
    }
    out.flush().map_err(|e| IoError::io(path, e))
}

const PLY_PROPERTIES: [(&str, &[&str]); 8] = [
    ("x", &["float", "float32"]),
    ("y", &["float", "float32"]),
    ("z", &["float", "float32"]),
    ("red", &["uchar", "uint8"]),
    ("green", &["uchar", "uint8"]),
    ("blue", &["uchar", "uint8"]),
    ("frame_idx", &["int", "int32"]),
    ("round", &["int", "int32"]),
];
const PLY_RECORD_BYTES: usize = 3 * 4 + 3 + 2 * 4;

/// Binary little-endian PLY; positions are stored as float32.
pub fn write_ply(path: &Path, cache: &WorldCache) -> Result<(), IoError> {
    let mut out = create(path)?;
    let mut buf = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property int frame_idx\nproperty int round\nend_header\n",
        cache.len()
    )
    .into_bytes();
    buf.reserve(cache.len() * PLY_RECORD_BYTES);
    for ((p, c), prov) in cache.positions().iter().zip(cache.colors()).zip(cache.provenance()) {
        for k in 0..3 {
            buf.extend_from_slice(&(p[k] as f32).to_le_bytes());
        }
        buf.extend_from_slice(c);
        buf.extend_from_slice(&prov.frame.to_le_bytes());
        buf.extend_from_slice(&prov.round.to_le_bytes());
    }
    out.write_all(&buf).and_then(|_| out.flush()).map_err(|e| IoError::io(path, e))
}

/// Reads a PLY written by [`write_ply`]; the vertex layout must match it.
pub fn read_ply(path: &Path) -> Result<WorldCache, IoError> {
    let mut reader = open(path)?;
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<File>| -> Result<String, IoError> {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| IoError::io(path, e))?;
        if n == 0 {
            return Err(IoError::format(path, "truncated PLY header"));
        }
        Ok(line.trim().to_string())
    };
    if next_line(&mut reader)? != "ply" {
        return Err(IoError::format(path, "missing ply magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    loop {
        let l = next_line(&mut reader)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["end_header"] => break,
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(IoError::format(path, format!("unsupported PLY format {fmt}")));
                }
            }
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| IoError::format(path, "bad vertex count"))?);
            }
            ["element", other, _] => {
                return Err(IoError::format(path, format!("unexpected element {other}")));
            }
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            _ => return Err(IoError::format(path, format!("unrecognized header line {l:?}"))),
        }
    }
    let count = count.ok_or_else(|| IoError::format(path, "no vertex element"))?;
    let layout_ok = props.len() == PLY_PROPERTIES.len()
        && props
            .iter()
            .zip(PLY_PROPERTIES)
            .all(|((ty, name), (want, types))| name == want && types.contains(&ty.as_str()));
    if !layout_ok {
        return Err(IoError::format(path, "vertex properties must be x y z red green blue frame_idx round"));
    }
    let mut data = Vec::new();
    reader.read_to_end(&mut data).map_err(|e| IoError::io(path, e))?;
    if data.len() != count * PLY_RECORD_BYTES {
        return Err(IoError::format(
            path,
            format!("expected {} vertex bytes, found {}", count * PLY_RECORD_BYTES, data.len()),
        ));
    }
    let f32_at = |r: &[u8], o: usize| f32::from_le_bytes([r[o], r[o + 1], r[o + 2], r[o + 3]]);
    let i32_at = |r: &[u8], o: usize| i32::from_le_bytes([r[o], r[o + 1], r[o + 2], r[o + 3]]);
    let mut positions = Vec::with_capacity(count);
    let mut colors = Vec::with_capacity(count);
    let mut provenance = Vec::with_capacity(count);
    for r in data.chunks_exact(PLY_RECORD_BYTES) {
        positions.push(Point3::new(f32_at(r, 0) as f64, f32_at(r, 4) as f64, f32_at(r, 8) as f64));
        colors.push([r[12], r[13], r[14]]);
        provenance.push(Provenance {
            frame: i32_at(r, 15),
            round: i32_at(r, 19),
        });
    }
    WorldCache::from_parts(positions, colors, provenance).map_err(|e| IoError::format(path, e.to_string()))
}
