//! Ray-cast synthetic RGB-D pairs with exact ground truth, and descriptors
//! computed from known world coordinates.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::alignment::random_pose;
use crate::camera::Intrinsics;
use crate::error::{Error, Result};
use crate::extract::FeatureMap;
use crate::frame::{RgbdFrame, SPATIAL_MULTIPLE};
use crate::pose::Pose;
use crate::tensor::Tensor;

/// Parameters of [`gen_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub n_shapes: usize,
    /// Half-width of the room in meters.
    pub extent_m: f64,
    pub max_rotation_deg: f64,
    pub max_translation_m: f64,
    /// Standard deviation of additive depth noise, meters.
    pub noise_sigma: f64,
    /// Fraction of valid pixels zeroed in each frame.
    pub hole_fraction: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            fov_deg: 90.0,
            n_shapes: 6,
            extent_m: 1.5,
            max_rotation_deg: 30.0,
            max_translation_m: 0.5,
            noise_sigma: 0.0,
            hole_fraction: 0.0,
        }
    }
}

impl SceneParams {
    pub const KEYS: &'static [&'static str] = &[
        "width",
        "height",
        "fov_deg",
        "n_shapes",
        "extent_m",
        "max_rotation_deg",
        "max_translation_m",
        "noise_sigma",
        "hole_fraction",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{v}` for scene parameter `{key}`")))
        }
        match key.trim() {
            "width" => self.width = num(key, value)?,
            "height" => self.height = num(key, value)?,
            "fov_deg" => self.fov_deg = num(key, value)?,
            "n_shapes" => self.n_shapes = num(key, value)?,
            "extent_m" => self.extent_m = num(key, value)?,
            "max_rotation_deg" => self.max_rotation_deg = num(key, value)?,
            "max_translation_m" => self.max_translation_m = num(key, value)?,
            "noise_sigma" => self.noise_sigma = num(key, value)?,
            "hole_fraction" => self.hole_fraction = num(key, value)?,
            other => return Err(Error::Config(format!("unknown scene parameter `{other}`"))),
        }
        Ok(())
    }

    /// Parses a comma-separated `key=value` list over the defaults.
    pub fn parse(list: &str) -> Result<Self> {
        let mut p = Self::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{item}`")))?;
            p.set(k, v)?;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width == 0 || self.height == 0 || !self.width.is_multiple_of(SPATIAL_MULTIPLE) || !self.height.is_multiple_of(SPATIAL_MULTIPLE) {
            return bad(format!(
                "image size {}x{} must be a positive multiple of {SPATIAL_MULTIPLE}",
                self.width, self.height
            ));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 170.0) {
            return bad(format!("fov_deg = {} outside (0, 170)", self.fov_deg));
        }
        if !(self.extent_m > 0.0 && self.extent_m.is_finite()) {
            return bad(format!("extent_m = {} must be positive", self.extent_m));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return bad(format!("max_rotation_deg = {} outside [0, 180]", self.max_rotation_deg));
        }
        if !(self.max_translation_m >= 0.0 && self.max_translation_m < 0.4 * self.extent_m) {
            return bad(format!(
                "max_translation_m = {} must lie in [0, 0.4 * extent_m)",
                self.max_translation_m
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma = {} must be non-negative", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.hole_fraction) {
            return bad(format!("hole_fraction = {} outside [0, 1)", self.hole_fraction));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let f = (self.width as f64 / 2.0) / (self.fov_deg.to_radians() / 2.0).tan();
        Intrinsics::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// Seen from inside.
    Room { min: Vector3<f64>, max: Vector3<f64> },
    /// Seen from outside.
    Box { min: Vector3<f64>, max: Vector3<f64> },
    /// The plane `z = z0`, facing −z.
    Plane { z0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Surface {
    shape: Shape,
    tint: [f64; 3],
    /// Texture wave vectors, radians per meter.
    waves: [Vector3<f64>; 2],
}

/// Static scene of textured surfaces in world coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    surfaces: Vec<Surface>,
}

fn random_surface<R: Rng>(rng: &mut R, shape: Shape) -> Surface {
    let mut wave = || {
        let dir = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
        dir * (2.0 * PI / rng.gen_range(0.15..0.6))
    };
    let waves = [wave(), wave()];
    Surface {
        shape,
        tint: [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)],
        waves,
    }
}

fn slab_entry(o: &Vector3<f64>, d: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<f64> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k] < min[k] || o[k] > max[k] {
                return None;
            }
            continue;
        }
        let a = (min[k] - o[k]) / d[k];
        let b = (max[k] - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t0 <= t1 && t0 > 0.0).then_some(t0)
}

fn room_exit(o: &Vector3<f64>, d: &Vector3<f64>, min: &Vector3<f64>, max: &Vector3<f64>) -> Option<f64> {
    let mut t = f64::INFINITY;
    for k in 0..3 {
        if d[k] > 0.0 {
            t = t.min((max[k] - o[k]) / d[k]);
        } else if d[k] < 0.0 {
            t = t.min((min[k] - o[k]) / d[k]);
        }
    }
    (t.is_finite() && t > 0.0).then_some(t)
}

impl Scene {
    /// A room enclosing both cameras plus `n_shapes` random boxes in front of
    /// the reference camera.
    pub fn random<R: Rng>(rng: &mut R, params: &SceneParams) -> Self {
        let e = params.extent_m;
        let mut surfaces = vec![random_surface(
            rng,
            Shape::Room {
                min: Vector3::new(-e, -0.75 * e, -e),
                max: Vector3::new(e, 0.75 * e, 1.2 * e),
            },
        )];
        // boxes keep clear of every camera position the pose range allows
        let clearance = params.max_translation_m + 0.05 * e;
        while surfaces.len() <= params.n_shapes {
            let c = Vector3::new(
                rng.gen_range(-0.6..0.6) * e,
                rng.gen_range(-0.4..0.4) * e,
                rng.gen_range(0.45..0.9) * e,
            );
            let h = Vector3::from_fn(|_, _| rng.gen_range(0.04..0.15) * e);
            let gap = (c.abs() - h).map(|v| v.max(0.0)).norm();
            if gap > clearance {
                surfaces.push(random_surface(rng, Shape::Box { min: c - h, max: c + h }));
            }
        }
        Self { surfaces }
    }

    /// A single textured plane `z = z0`.
    pub fn plane(z0: f64) -> Self {
        Self {
            surfaces: vec![Surface {
                shape: Shape::Plane { z0 },
                tint: [0.9, 0.7, 0.5],
                waves: [Vector3::new(7.0, 3.0, 0.0), Vector3::new(-2.0, 9.0, 0.0)],
            }],
        }
    }

    /// Nearest hit along `o + s·d` with `s > 0`: `(s, surface index)`.
    pub fn cast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let t = match s.shape {
                Shape::Room { min, max } => room_exit(o, d, &min, &max),
                Shape::Box { min, max } => slab_entry(o, d, &min, &max),
                Shape::Plane { z0 } => {
                    let t = (z0 - o.z) / d.z;
                    (d.z != 0.0 && t > 0.0).then_some(t)
                }
            };
            if let Some(t) = t {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, i));
                }
            }
        }
        best
    }

    fn color(&self, surface: usize, p: &Vector3<f64>) -> [f32; 3] {
        let s = &self.surfaces[surface];
        let a = (s.waves[0].dot(p)).sin();
        let b = (s.waves[1].dot(p)).sin();
        let shade = 0.55 + 0.25 * a + 0.15 * b;
        let mut c = [0.0f32; 3];
        for k in 0..3 {
            c[k] = (s.tint[k] * shade).clamp(0.0, 1.0) as f32;
        }
        c
    }

    /// Ray-casts one frame from a camera whose camera-to-world pose is
    /// `cam_to_world`. Depth is the camera-frame `z`; misses are holes.
    pub fn render(&self, cam_to_world: &Pose, k: &Intrinsics) -> Result<RgbdFrame> {
        let (w, h) = (k.width, k.height);
        let mut rgb = vec![0.0f32; w * h * 3];
        let mut depth = vec![0.0f32; w * h];
        let o = *cam_to_world.translation();
        for y in 0..h {
            for x in 0..w {
                let (z, c) = self.sample(cam_to_world, k, x as f64, y as f64, &o);
                depth[y * w + x] = z as f32;
                rgb[(y * w + x) * 3..][..3].copy_from_slice(&c);
            }
        }
        RgbdFrame::new(rgb, depth, *k)
    }

    fn sample(&self, cam_to_world: &Pose, k: &Intrinsics, u: f64, v: f64, o: &Vector3<f64>) -> (f64, [f32; 3]) {
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let d = cam_to_world.rotation() * d_cam;
        match self.cast(o, &d) {
            Some((s, i)) => (s, self.color(i, &(o + d * s))),
            None => (0.0, [0.0; 3]),
        }
    }

    /// Camera-frame depth of the first surface along the ray through the
    /// continuous image position `(u, v)`.
    pub fn depth_along(&self, cam_to_world: &Pose, k: &Intrinsics, u: f64, v: f64) -> Option<f64> {
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        self.cast(cam_to_world.translation(), &(cam_to_world.rotation() * d_cam)).map(|(s, _)| s)
    }
}

/// A generated pair. `pose_gt` maps reference-camera coordinates to
/// target-camera coordinates; the world frame is the reference camera.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub frame_r: RgbdFrame,
    pub frame_t: RgbdFrame,
    pub pose_gt: Pose,
    pub scene: Scene,
}

impl SyntheticPair {
    pub fn ref_to_world(&self) -> Pose {
        Pose::identity()
    }

    pub fn tgt_to_world(&self) -> Pose {
        self.pose_gt.inverse()
    }
}

fn degrade<R: Rng>(rng: &mut R, frame: RgbdFrame, params: &SceneParams) -> Result<RgbdFrame> {
    if params.noise_sigma == 0.0 && params.hole_fraction == 0.0 {
        return Ok(frame);
    }
    let mut depth = frame.depth().to_vec();
    if params.noise_sigma > 0.0 {
        for d in depth.iter_mut().filter(|d| **d > 0.0) {
            *d = (*d as f64 + params.noise_sigma * rng.sample::<f64, _>(StandardNormal)).max(0.0) as f32;
        }
    }
    let mut valid: Vec<usize> = (0..depth.len()).filter(|&i| depth[i] > 0.0).collect();
    let holes = (params.hole_fraction * valid.len() as f64).round() as usize;
    valid.shuffle(rng);
    for &i in &valid[..holes] {
        depth[i] = 0.0;
    }
    frame.with_depth(depth)
}

/// Random scene seen from two cameras differing by a random rigid motion
/// within the configured magnitude.
pub fn gen_scene(seed: u64, params: &SceneParams) -> Result<SyntheticPair> {
    params.validate()?;
    let k = params.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::random(&mut rng, params);
    let pose_gt = if params.max_rotation_deg == 0.0 && params.max_translation_m == 0.0 {
        Pose::identity()
    } else {
        random_pose(&mut rng, params.max_rotation_deg.to_radians(), params.max_translation_m)
    };
    let frame_r = scene.render(&Pose::identity(), &k)?;
    let frame_t = scene.render(&pose_gt.inverse(), &k)?;
    if frame_r.valid_count() == 0 || frame_t.valid_count() == 0 {
        return Err(Error::Degenerate("synthetic camera sees no surface".into()));
    }
    let mut noise_r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let mut noise_t = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let frame_r = degrade(&mut noise_r, frame_r, params)?;
    let frame_t = degrade(&mut noise_t, frame_t, params)?;
    Ok(SyntheticPair {
        frame_r,
        frame_t,
        pose_gt,
        scene,
    })
}

/// Integer pixel shift between the two frames of [`perfect_pair`].
pub const PERFECT_PAIR_SHIFT: usize = 4;

/// Fronto-parallel textured plane at 2 m seen by two cameras whose
/// translation moves the image by exactly [`PERFECT_PAIR_SHIFT`] pixels.
/// All quantities involved are dyadic, so rendering one frame through the
/// ground-truth pose reproduces the other bit for bit where they overlap.
pub fn perfect_pair(width: usize, height: usize) -> Result<SyntheticPair> {
    let z0 = 2.0;
    let f = 64.0;
    let k = Intrinsics::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)?;
    let tx = PERFECT_PAIR_SHIFT as f64 * z0 / f;
    let pose_gt = Pose::new(nalgebra::Matrix3::identity(), Vector3::new(tx, 0.0, 0.0))?;
    let scene = Scene::plane(z0);
    let frame_r = scene.render(&Pose::identity(), &k)?;
    let frame_t = scene.render(&pose_gt.inverse(), &k)?;
    Ok(SyntheticPair {
        frame_r,
        frame_t,
        pose_gt,
        scene,
    })
}

/// Wavelengths in meters of the oracle descriptor's sinusoids.
pub const ORACLE_WAVELENGTHS: [f64; 4] = [16.0, 4.0, 1.0, 0.25];

/// Channels carrying information in an oracle descriptor; the rest are zero.
pub const ORACLE_CHANNELS: usize = 3 * 2 * ORACLE_WAVELENGTHS.len();

/// Unit-norm descriptor of a world point: sine and cosine of each
/// coordinate at several wavelengths, zero-padded to `dim`. The inner product
/// of two descriptors is a mean of `cos(ω·Δ)` terms, so cosine distance
/// grows with separation at every scale below the shortest half wavelength.
pub fn oracle_descriptor(p: &Point3<f64>, dim: usize) -> Vec<f32> {
    let norm = 1.0 / ((3 * ORACLE_WAVELENGTHS.len()) as f64).sqrt();
    let mut out = vec![0.0f32; dim];
    let mut i = 0;
    for axis in 0..3 {
        for lambda in ORACLE_WAVELENGTHS {
            let a = 2.0 * PI * p[axis] / lambda;
            out[i] = (a.sin() * norm) as f32;
            out[i + 1] = (a.cos() * norm) as f32;
            i += 2;
        }
    }
    out
}

/// Per-pixel oracle descriptors of `frame` given its camera-to-world pose.
/// Pixels without depth get zero vectors.
pub fn oracle_features(frame: &RgbdFrame, cam_to_world: &Pose, dim: usize) -> Result<FeatureMap> {
    if dim < ORACLE_CHANNELS {
        return Err(Error::shape("oracle_features", "descriptor channels (minimum)", ORACLE_CHANNELS, dim));
    }
    let (w, h) = (frame.width(), frame.height());
    let k = frame.intrinsics();
    let mut data = vec![0.0f32; w * h * dim];
    for y in 0..h {
        for x in 0..w {
            let d = frame.depth()[y * w + x];
            if d > 0.0 {
                let p = cam_to_world.apply(&k.unproject(x as f64, y as f64, d as f64));
                data[(y * w + x) * dim..][..dim].copy_from_slice(&oracle_descriptor(&p, dim));
            }
        }
    }
    FeatureMap::new(Tensor::new(vec![h, w, dim], data)?, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneParams {
        SceneParams {
            width: 48,
            height: 32,
            ..SceneParams::default()
        }
    }

    #[test]
    fn zero_motion_gives_identical_frames() {
        let p = SceneParams {
            max_rotation_deg: 0.0,
            max_translation_m: 0.0,
            ..small()
        };
        let pair = gen_scene(3, &p).unwrap();
        assert_eq!(pair.pose_gt, Pose::identity());
        assert_eq!(pair.frame_r, pair.frame_t);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = SceneParams { noise_sigma: 0.01, hole_fraction: 0.1, ..small() };
        let a = gen_scene(11, &p).unwrap();
        let b = gen_scene(11, &p).unwrap();
        assert_eq!(a.frame_r, b.frame_r);
        assert_eq!(a.frame_t, b.frame_t);
        assert_eq!(a.pose_gt, b.pose_gt);
        assert_ne!(gen_scene(12, &p).unwrap().frame_r, a.frame_r);
    }

    #[test]
    fn room_encloses_cameras() {
        for seed in 0..10 {
            let pair = gen_scene(seed, &small()).unwrap();
            assert_eq!(pair.frame_r.valid_count(), 48 * 32);
            assert_eq!(pair.frame_t.valid_count(), 48 * 32);
        }
    }

    #[test]
    fn holes_and_noise() {
        let p = SceneParams { hole_fraction: 0.25, ..small() };
        let pair = gen_scene(5, &p).unwrap();
        assert_eq!(pair.frame_r.valid_count(), 48 * 32 - (0.25 * (48 * 32) as f64).round() as usize);
        let q = SceneParams { noise_sigma: 0.01, ..small() };
        let noisy = gen_scene(5, &q).unwrap();
        let clean = gen_scene(5, &small()).unwrap();
        assert_ne!(noisy.frame_r.depth(), clean.frame_r.depth());
        assert_eq!(noisy.pose_gt, clean.pose_gt);
    }

    #[test]
    fn degenerate_params_rejected() {
        for bad in [
            "width=50",
            "extent_m=0",
            "hole_fraction=1",
            "noise_sigma=-1",
            "max_translation_m=5",
            "bogus=1",
            "width",
        ] {
            assert!(SceneParams::parse(bad).is_err(), "{bad}");
        }
        let p = SceneParams::parse("width=64, height=48,n_shapes=2").unwrap();
        assert_eq!((p.width, p.height, p.n_shapes), (64, 48, 2));
    }

    #[test]
    fn reference_points_lie_on_target_surface() {
        // ray-cast consistency: every reference point either sits on the
        // surface the target camera sees along its ray, or is occluded
        let pair = gen_scene(21, &small()).unwrap();
        let k = pair.frame_t.intrinsics();
        let mut checked = 0;
        for p in pair.frame_r.unproject().positions {
            let q = pair.pose_gt.apply(&p);
            let Some((u, v)) = k.project(&q) else { continue };
            if u < 0.0 || v < 0.0 || u > (k.width - 1) as f64 || v > (k.height - 1) as f64 {
                continue;
            }
            let z = pair.scene.depth_along(&pair.tgt_to_world(), k, u, v).unwrap();
            if z >= q.z - 1e-3 {
                assert!((z - q.z).abs() < 1e-3, "{z} vs {}", q.z);
                checked += 1;
            }
        }
        assert!(checked > 500);
    }

    #[test]
    fn perfect_pair_is_pixel_shifted() {
        let pair = perfect_pair(32, 24).unwrap();
        let s = PERFECT_PAIR_SHIFT;
        for y in 0..24 {
            for x in 0..32 - s {
                assert_eq!(pair.frame_t.pixel_rgb(y, x + s), pair.frame_r.pixel_rgb(y, x));
                assert_eq!(pair.frame_t.depth()[y * 32 + x], 2.0);
            }
        }
    }

    #[test]
    fn oracle_descriptors() {
        let pair = perfect_pair(32, 24).unwrap();
        let fr = oracle_features(&pair.frame_r, &pair.ref_to_world(), 64).unwrap();
        let ft = oracle_features(&pair.frame_t, &pair.tgt_to_world(), 64).unwrap();
        // co-visible points share descriptors
        for (a, b) in fr.pixel(5, 10).iter().zip(ft.pixel(5, 10 + PERFECT_PAIR_SHIFT)) {
            assert!((a - b).abs() < 1e-6);
        }
        let norm: f32 = fr.pixel(3, 3).iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-5);
        // distinct points at least 1 cm apart differ
        let a = oracle_descriptor(&Point3::new(0.3, 0.2, 2.0), 64);
        let b = oracle_descriptor(&Point3::new(0.31, 0.2, 2.0), 64);
        assert!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f32>() > 0.0);
        assert!(oracle_features(&pair.frame_r, &Pose::identity(), 8).is_err());
    }
}
