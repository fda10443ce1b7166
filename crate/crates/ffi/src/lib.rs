//! C ABI over the registration pipeline.
//!
//! Frames, models and configurations cross the boundary as opaque handles
//! created and freed by this library. Poses are row-major `double[16]`
//! homogeneous matrices mapping reference-camera to target-camera
//! coordinates. Every fallible call returns a [`GaveStatus`]; on failure the
//! message is available from [`gave_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gave::camera::Intrinsics;
use gave::config::PipelineConfig;
use gave::extract::{init_weights, GaveModel};
use gave::frame::RgbdFrame;
use gave::pipeline::{register_pair, FeatureSource};
use gave::pose::Pose;
use gave::synth::{gen_scene, SceneParams};
use gave::Error;
use nalgebra::{Matrix4, Point3};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaveStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Shape = 6,
    Weights = 7,
    NoValidDepth = 8,
    Degenerate = 9,
    Panic = 10,
}

impl From<&Error> for GaveStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape { .. } => GaveStatus::Shape,
            Error::InvalidArgument(_) | Error::Empty(_) => GaveStatus::InvalidArgument,
            Error::Config(_) => GaveStatus::Config,
            Error::Io { .. } => GaveStatus::Io,
            Error::Image { .. } | Error::Format { .. } | Error::Parse { .. } => GaveStatus::Format,
            Error::MissingWeight { .. } | Error::WeightShape { .. } => GaveStatus::Weights,
            Error::NoValidDepth | Error::NoCoverage => GaveStatus::NoValidDepth,
            Error::Degenerate(_) | Error::RepeatedSingularValues { .. } => GaveStatus::Degenerate,
        }
    }
}

/// An RGB-D frame with its intrinsics.
pub struct GaveFrame(RgbdFrame);

/// Pipeline configuration: network sizes, matching, alignment and loss settings.
pub struct GaveConfig(PipelineConfig);

/// A feature extractor together with the configuration it was built for.
pub struct GaveExtractor(GaveModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> GaveStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GaveStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            GaveStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            GaveStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            GaveStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    let s = CStr::from_ptr(borrow(p, what)?);
    s.to_str().map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(borrow(p, what)?, n))
}

unsafe fn read_pose(p: *const f64, what: &'static str) -> Result<Pose, Fail> {
    let m = Matrix4::from_row_slice(slice(p, 16, what)?);
    Ok(Pose::from_matrix4(&m)?)
}

unsafe fn write_pose(pose: &Pose, out: *mut f64) -> Result<(), Fail> {
    let out = std::slice::from_raw_parts_mut(borrow_mut(out, "out_pose")?, 16);
    let m = pose.to_matrix4();
    for r in 0..4 {
        for c in 0..4 {
            out[r * 4 + c] = m[(r, c)];
        }
    }
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gave_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn gave_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gave_config_new(out: *mut *mut GaveConfig) -> GaveStatus {
    guard(|| {
        *borrow_mut(out, "out")? = boxed(GaveConfig(PipelineConfig::default()));
        Ok(())
    })
}

/// Configuration read from a key-value file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gave_config_load(path: *const c_char, out: *mut *mut GaveConfig) -> GaveStatus {
    guard(|| {
        let cfg = PipelineConfig::load(&PathBuf::from(text(path, "path")?))?;
        *borrow_mut(out, "out")? = boxed(GaveConfig(cfg));
        Ok(())
    })
}

/// Sets one configuration key. The configuration is unchanged on failure.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn gave_config_set(cfg: *mut GaveConfig, key: *const c_char, value: *const c_char) -> GaveStatus {
    guard(|| {
        let cfg = borrow_mut(cfg, "cfg")?;
        let mut next = cfg.0;
        next.set(text(key, "key")?, text(value, "value")?)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn gave_config_free(cfg: *mut GaveConfig) {
    free(cfg)
}

/// Frame from interleaved RGB in `[0, 1]` (`3 * width * height` floats) and
/// depth in meters (`width * height` floats, zero where missing).
///
/// # Safety
/// The buffers must hold the stated number of elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gave_frame_new(
    width: usize,
    height: usize,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    rgb: *const f32,
    depth: *const f32,
    out: *mut *mut GaveFrame,
) -> GaveStatus {
    guard(|| {
        let n = width.checked_mul(height).ok_or_else(|| Error::InvalidArgument("frame too large".into()))?;
        let k = Intrinsics::new(fx, fy, cx, cy, width, height)?;
        let frame = RgbdFrame::new(slice(rgb, 3 * n, "rgb")?.to_vec(), slice(depth, n, "depth")?.to_vec(), k)?;
        *borrow_mut(out, "out")? = boxed(GaveFrame(frame));
        Ok(())
    })
}

/// Frame from an 8-bit RGB PNG, a 16-bit millimeter depth PNG and an intrinsics file.
///
/// # Safety
/// Paths must be nul-terminated strings; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gave_frame_load(
    rgb_path: *const c_char,
    depth_path: *const c_char,
    intrinsics_path: *const c_char,
    out: *mut *mut GaveFrame,
) -> GaveStatus {
    guard(|| {
        let k = gave::io::load_intrinsics(&PathBuf::from(text(intrinsics_path, "intrinsics_path")?))?;
        let frame = gave::io::load_rgbd(
            &PathBuf::from(text(rgb_path, "rgb_path")?),
            &PathBuf::from(text(depth_path, "depth_path")?),
            &k,
        )?;
        *borrow_mut(out, "out")? = boxed(GaveFrame(frame));
        Ok(())
    })
}

/// Width and height of a frame.
///
/// # Safety
/// `frame` must come from this library; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gave_frame_size(frame: *const GaveFrame, width: *mut usize, height: *mut usize) -> GaveStatus {
    guard(|| {
        let f = &borrow(frame, "frame")?.0;
        *borrow_mut(width, "width")? = f.width();
        *borrow_mut(height, "height")? = f.height();
        Ok(())
    })
}

/// Copies a frame's depth (`width * height` floats) into `out`.
///
/// # Safety
/// `out` must have room for `width * height` floats.
#[no_mangle]
pub unsafe extern "C" fn gave_frame_depth(frame: *const GaveFrame, out: *mut f32) -> GaveStatus {
    guard(|| {
        let d = borrow(frame, "frame")?.0.depth();
        std::slice::from_raw_parts_mut(borrow_mut(out, "out")?, d.len()).copy_from_slice(d);
        Ok(())
    })
}

/// # Safety
/// `frame` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn gave_frame_free(frame: *mut GaveFrame) {
    free(frame)
}

/// Synthetic frame pair. `params` is a comma-separated `key=value` list and
/// may be null or empty for defaults.
///
/// # Safety
/// Out pointers must be valid; `out_gt_pose` must hold 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn gave_synth_pair(
    seed: u64,
    params: *const c_char,
    out_ref: *mut *mut GaveFrame,
    out_tgt: *mut *mut GaveFrame,
    out_gt_pose: *mut f64,
) -> GaveStatus {
    guard(|| {
        let params = if params.is_null() { SceneParams::default() } else { SceneParams::parse(text(params, "params")?)? };
        let out_ref = borrow_mut(out_ref, "out_ref")?;
        let out_tgt = borrow_mut(out_tgt, "out_tgt")?;
        let pair = gen_scene(seed, &params)?;
        write_pose(&pair.pose_gt, out_gt_pose)?;
        *out_ref = boxed(GaveFrame(pair.frame_r));
        *out_tgt = boxed(GaveFrame(pair.frame_t));
        Ok(())
    })
}

unsafe fn config_or_default(cfg: *const GaveConfig) -> PipelineConfig {
    cfg.as_ref().map_or_else(PipelineConfig::default, |c| c.0)
}

/// Extractor with deterministically initialized weights. `cfg` may be null.
///
/// # Safety
/// `cfg` must come from this library or be null; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gave_model_from_seed(cfg: *const GaveConfig, seed: u64, out: *mut *mut GaveExtractor) -> GaveStatus {
    guard(|| {
        let cfg = config_or_default(cfg);
        let model = GaveModel::new(&init_weights(seed, &cfg.llt)?, &cfg.llt)?;
        *borrow_mut(out, "out")? = boxed(GaveExtractor(model));
        Ok(())
    })
}

/// Extractor with weights from an LLTW file. `cfg` may be null.
///
/// # Safety
/// `path` must be nul-terminated; `cfg` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn gave_model_load(cfg: *const GaveConfig, path: *const c_char, out: *mut *mut GaveExtractor) -> GaveStatus {
    guard(|| {
        let cfg = config_or_default(cfg);
        let weights = gave::io::load_model_weights(&PathBuf::from(text(path, "path")?), &cfg.llt)?;
        *borrow_mut(out, "out")? = boxed(GaveExtractor(GaveModel::new(&weights, &cfg.llt)?));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn gave_model_free(model: *mut GaveExtractor) {
    free(model)
}

/// Registers `reference` onto `target` with network features. `cfg` may be
/// null; its network sizes must match the ones the model was built with.
///
/// # Safety
/// Handles must come from this library; `out_pose` must hold 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn gave_register(
    reference: *const GaveFrame,
    target: *const GaveFrame,
    model: *const GaveExtractor,
    cfg: *const GaveConfig,
    out_pose: *mut f64,
) -> GaveStatus {
    guard(|| {
        let (r, t) = (&borrow(reference, "reference")?.0, &borrow(target, "target")?.0);
        let model = &borrow(model, "model")?.0;
        let cfg = config_or_default(cfg);
        if model.config() != &cfg.llt {
            return Err(Error::Config("configuration network sizes differ from the model's".into()).into());
        }
        let reg = register_pair(r, t, FeatureSource::Model(model), &cfg)?;
        write_pose(&reg.pose, out_pose)
    })
}

/// Registers with descriptors derived from a known ground-truth pose.
///
/// # Safety
/// Handles must come from this library; pose buffers must hold 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn gave_register_oracle(
    reference: *const GaveFrame,
    target: *const GaveFrame,
    gt_pose: *const f64,
    cfg: *const GaveConfig,
    out_pose: *mut f64,
) -> GaveStatus {
    guard(|| {
        let (r, t) = (&borrow(reference, "reference")?.0, &borrow(target, "target")?.0);
        let gt = read_pose(gt_pose, "gt_pose")?;
        let reg = register_pair(r, t, FeatureSource::oracle_from_gt(&gt), &config_or_default(cfg))?;
        write_pose(&reg.pose, out_pose)
    })
}

/// Weighted least-squares rigid transform taking `x` onto `y`. Points are
/// `n` packed xyz triples; `w` holds `n` non-negative weights.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn gave_procrustes(n: usize, x: *const f64, y: *const f64, w: *const f64, out_pose: *mut f64) -> GaveStatus {
    guard(|| {
        let pts = |p, what| -> Result<Vec<Point3<f64>>, Fail> {
            Ok(slice(p, 3 * n, what)?.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect())
        };
        let pose = gave::alignment::weighted_procrustes(&pts(x, "x")?, &pts(y, "y")?, slice(w, n, "w")?)?;
        write_pose(&pose, out_pose)
    })
}

/// Geodesic angle in degrees and translation distance in millimeters between two poses.
///
/// # Safety
/// Pose buffers must hold 16 doubles; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gave_pose_error(est: *const f64, gt: *const f64, rotation_deg: *mut f64, translation_mm: *mut f64) -> GaveStatus {
    guard(|| {
        let (e, g) = (read_pose(est, "est")?, read_pose(gt, "gt")?);
        *borrow_mut(rotation_deg, "rotation_deg")? = gave::metrics::rotation_error(e.rotation(), g.rotation());
        *borrow_mut(translation_mm, "translation_mm")? = gave::metrics::translation_error(e.translation(), g.translation());
        Ok(())
    })
}
