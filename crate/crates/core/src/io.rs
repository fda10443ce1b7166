//! On-disk formats: RGB-D image pairs, intrinsics, poses, point clouds,
//! correspondences and model weights.
//!
//! * Color: 8-bit RGB PNG. Depth: 16-bit grayscale PNG in millimeters, `0`
//!   marking a hole.
//! * Intrinsics: `key = value` lines for `fx fy cx cy width height`.
//! * Pose: the row-major 4×4 homogeneous matrix, 16 whitespace-separated reals.
//! * Point cloud: ASCII PLY with `x y z` and optional `red green blue`.
//! * Weights: `LLTW` magic, `u32` version, then records of
//!   `name_len: u32, name, rank: u32, extents: u32 × rank, f32 payload`, all
//!   little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix4, Point3};

use crate::camera::Intrinsics;
use crate::cloud::PointCloud;
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::frame::{center_crop_window, RgbdFrame};
use crate::pose::Pose;
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LLTW";
pub const WEIGHTS_VERSION: u32 = 1;

/// Millimeters per stored depth unit.
pub const DEPTH_SCALE: f32 = 1000.0;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

pub fn parse_intrinsics(text: &str, path: &Path) -> Result<Intrinsics> {
    let mut vals: [Option<f64>; 6] = [None; 6];
    const KEYS: [&str; 6] = ["fx", "fy", "cx", "cy", "width", "height"];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, lineno + 1, "expected key = value"))?;
        let slot = KEYS
            .iter()
            .position(|key| *key == k.trim())
            .ok_or_else(|| parse_err(path, lineno + 1, format!("unknown key `{}`", k.trim())))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("bad number `{}`", v.trim())))?;
        vals[slot] = Some(v);
    }
    let get = |i: usize| vals[i].ok_or_else(|| parse_err(path, 0, format!("missing key `{}`", KEYS[i])));
    let (w, h) = (get(4)?, get(5)?);
    if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
        return Err(parse_err(path, 0, "width and height must be positive integers"));
    }
    Intrinsics::new(get(0)?, get(1)?, get(2)?, get(3)?, w as usize, h as usize)
}

pub fn load_intrinsics(path: &Path) -> Result<Intrinsics> {
    parse_intrinsics(&read_text(path)?, path)
}

pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!(
        "fx = {}\nfy = {}\ncx = {}\ncy = {}\nwidth = {}\nheight = {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

pub fn save_intrinsics(k: &Intrinsics, path: &Path) -> Result<()> {
    write_bytes(path, format_intrinsics(k).as_bytes())
}

/// Loads an 8-bit color image and a 16-bit millimeter depth image taken with
/// `intrinsics`, center-cropping both to multiples of 8.
pub fn load_rgbd(rgb_path: &Path, depth_path: &Path, intrinsics: &Intrinsics) -> Result<RgbdFrame> {
    let rgb = image::open(rgb_path).map_err(|e| image_err(rgb_path, e))?;
    let depth = image::open(depth_path).map_err(|e| image_err(depth_path, e))?;
    if !matches!(rgb.color(), image::ColorType::Rgb8 | image::ColorType::Rgba8) {
        return Err(image_err(rgb_path, format!("expected 8-bit RGB, found {:?}", rgb.color())));
    }
    if depth.color() != image::ColorType::L16 {
        return Err(image_err(
            depth_path,
            format!("expected 16-bit single-channel depth, found {:?}", depth.color()),
        ));
    }
    let rgb = rgb.to_rgb8();
    let depth = depth.to_luma16();
    if rgb.dimensions() != depth.dimensions() {
        return Err(image_err(
            depth_path,
            format!(
                "depth is {:?} but color is {:?}",
                depth.dimensions(),
                rgb.dimensions()
            ),
        ));
    }
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if (intrinsics.width, intrinsics.height) != (w, h) {
        return Err(image_err(
            rgb_path,
            format!(
                "image is {w}x{h} but intrinsics describe {}x{}",
                intrinsics.width, intrinsics.height
            ),
        ));
    }
    let (x0, y0, cw, ch) = center_crop_window(w, h)?;
    let mut rgb_out = Vec::with_capacity(cw * ch * 3);
    let mut depth_out = Vec::with_capacity(cw * ch);
    for y in y0..y0 + ch {
        for x in x0..x0 + cw {
            let px = rgb.get_pixel(x as u32, y as u32);
            rgb_out.extend(px.0.iter().map(|&c| c as f32 / 255.0));
            depth_out.push(depth.get_pixel(x as u32, y as u32).0[0] as f32 / DEPTH_SCALE);
        }
    }
    RgbdFrame::new(rgb_out, depth_out, intrinsics.cropped(x0, y0, cw, ch)?)
}

pub fn save_rgb_png(width: usize, height: usize, rgb: &[f32], path: &Path) -> Result<()> {
    let bytes: Vec<u8> = rgb.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| image_err(path, "color buffer does not match extents"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

/// Writes meters as 16-bit millimeters; values beyond the u16 range saturate.
pub fn save_depth_png(width: usize, height: usize, depth: &[f32], path: &Path) -> Result<()> {
    let mm: Vec<u16> = depth
        .iter()
        .map(|&d| (d * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f32) as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(width as u32, height as u32, mm)
        .ok_or_else(|| image_err(path, "depth buffer does not match extents"))?;
    img.save(path).map_err(|e| image_err(path, e))
}

pub fn save_rgbd(frame: &RgbdFrame, rgb_path: &Path, depth_path: &Path) -> Result<()> {
    save_rgb_png(frame.width(), frame.height(), frame.rgb(), rgb_path)?;
    save_depth_png(frame.width(), frame.height(), frame.depth(), depth_path)
}

pub fn format_pose(pose: &Pose) -> String {
    let m = pose.to_matrix4();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_pose(text: &str, path: &Path) -> Result<Pose> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(path, format!("bad number `{t}` in pose"))))
        .collect::<Result<_>>()?;
    if vals.len() != 16 {
        return Err(Error::format(path, format!("pose needs 16 values, found {}", vals.len())));
    }
    Pose::from_matrix4(&Matrix4::from_row_slice(&vals)).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_pose(pose: &Pose, path: &Path) -> Result<()> {
    write_bytes(path, format_pose(pose).as_bytes())
}

pub fn load_pose(path: &Path) -> Result<Pose> {
    parse_pose(&read_text(path)?, path)
}

pub fn format_ply(cloud: &PointCloud) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    s.push_str(&format!("element vertex {}\n", cloud.len()));
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    if cloud.colors.is_some() {
        s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    s.push_str("end_header\n");
    for (i, p) in cloud.positions.iter().enumerate() {
        s.push_str(&format!("{} {} {}", p.x as f32, p.y as f32, p.z as f32));
        if let Some(colors) = &cloud.colors {
            let c = colors[i].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            s.push_str(&format!(" {} {} {}", c[0], c[1], c[2]));
        }
        s.push('\n');
    }
    s
}

pub fn save_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    cloud.validate()?;
    write_bytes(path, format_ply(cloud).as_bytes())
}

/// Reads the ASCII PLY subset written by [`save_ply`].
pub fn load_ply(path: &Path) -> Result<PointCloud> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let mut count = None;
    let mut props = Vec::new();
    for (lineno, line) in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["ply"] | ["format", "ascii", "1.0"] | [] => {}
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| parse_err(path, lineno + 1, "bad vertex count"))?)
            }
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(parse_err(path, lineno + 1, format!("unsupported header line `{line}`"))),
        }
    }
    let n = count.ok_or_else(|| parse_err(path, 0, "missing vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(path, 0, "missing x/y/z properties")),
    };
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some((r, g, b)),
        _ => None,
    };
    let mut cloud = PointCloud::default();
    let mut colors = Vec::new();
    for (lineno, line) in lines.take(n) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(path, lineno + 1, format!("bad number `{t}`"))))
            .collect::<Result<_>>()?;
        if vals.len() != props.len() {
            return Err(parse_err(path, lineno + 1, "wrong number of values"));
        }
        cloud.positions.push(Point3::new(vals[xi], vals[yi], vals[zi]));
        if let Some((r, g, b)) = rgb {
            colors.push([vals[r] as f32 / 255.0, vals[g] as f32 / 255.0, vals[b] as f32 / 255.0]);
        }
    }
    if cloud.len() != n {
        return Err(Error::format(path, format!("expected {n} vertices, found {}", cloud.len())));
    }
    if rgb.is_some() {
        cloud.colors = Some(colors);
    }
    Ok(cloud)
}

/// One `ref_index tgt_index weight` line per correspondence.
pub fn format_correspondences(c: &CorrespondenceSet) -> String {
    c.pairs()
        .iter()
        .map(|p| format!("{} {} {}\n", p.ref_index, p.tgt_index, p.weight))
        .collect()
}

pub fn save_correspondences(c: &CorrespondenceSet, path: &Path) -> Result<()> {
    write_bytes(path, format_correspondences(c).as_bytes())
}

pub fn encode_weights(weights: &ModelWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    for (name, t) in weights.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated weight file while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode_weights(bytes: &[u8], path: &Path) -> Result<ModelWeights> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::format(path, "bad magic, not an LLTW weight file"));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(path, format!("unsupported weight file version {version}")));
    }
    let mut weights = ModelWeights::new();
    while !r.done() {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&c| c > 0 && c <= bytes.len() / 4)
            .ok_or_else(|| Error::format(path, format!("tensor `{name}` has invalid shape {shape:?}")))?;
        let payload = r.take(count * 4, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::format(path, e.to_string()))?;
        weights
            .insert(name.clone(), tensor)
            .map_err(|_| Error::format(path, format!("duplicate tensor name `{name}`")))?;
    }
    Ok(weights)
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_weights(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes, path)
}

/// Loads weights and checks they cover every layer `cfg` needs.
pub fn load_model_weights(path: &Path, cfg: &crate::config::LltConfig) -> Result<ModelWeights> {
    let weights = load_weights(path)?;
    weights.validate(cfg)?;
    Ok(weights)
}
