//! Hard z-buffer point splatting and the consistency losses built on it.

use crate::alignment::gather_pairs;
use crate::camera::Intrinsics;
use crate::cloud::PointCloud;
use crate::config::LossWeights;
use crate::correspondence::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::pose::Pose;

/// Output of [`render_points`]. Uncovered pixels hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub depth: Vec<f32>,
    pub mask: Vec<bool>,
}

impl Rendered {
    pub fn covered(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Projects every point through `pose` and `intr`, rounding to the nearest
/// pixel and keeping the nearest point per pixel. On equal depth the earlier
/// point wins. Points without colors render black.
pub fn render_points(cloud: &PointCloud, pose: &Pose, intr: &Intrinsics) -> Result<Rendered> {
    if cloud.is_empty() {
        return Err(Error::Empty("render_points: point cloud"));
    }
    let (w, h) = (intr.width, intr.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut winner = vec![usize::MAX; w * h];
    for (i, p) in cloud.positions.iter().enumerate() {
        let q = pose.apply(p);
        let Some((y, x)) = intr.project_to_pixel(&q) else {
            continue;
        };
        let at = y * w + x;
        if q.z < zbuf[at] {
            zbuf[at] = q.z;
            winner[at] = i;
        }
    }
    let mut out = Rendered {
        width: w,
        height: h,
        rgb: vec![0.0; w * h * 3],
        depth: vec![0.0; w * h],
        mask: vec![false; w * h],
    };
    for (at, &i) in winner.iter().enumerate() {
        if i == usize::MAX {
            continue;
        }
        out.mask[at] = true;
        out.depth[at] = zbuf[at] as f32;
        if let Some(colors) = &cloud.colors {
            out.rgb[at * 3..at * 3 + 3].copy_from_slice(&colors[i]);
        }
    }
    Ok(out)
}

/// Mean absolute difference over pixels where `mask` holds, averaged over
/// channels. Returns `(loss, covered_pixels)`.
pub fn masked_l1(a: &[f32], b: &[f32], mask: &[bool], channels: usize) -> Result<(f64, usize)> {
    if a.len() != mask.len() * channels {
        return Err(Error::shape("masked_l1", "rendered length", mask.len() * channels, a.len()));
    }
    if b.len() != a.len() {
        return Err(Error::shape("masked_l1", "target length", a.len(), b.len()));
    }
    let mut sum = 0.0f64;
    let mut covered = 0usize;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        covered += 1;
        for c in 0..channels {
            let k = i * channels + c;
            sum += (a[k] as f64 - b[k] as f64).abs();
        }
    }
    if covered == 0 {
        return Err(Error::NoCoverage);
    }
    Ok((sum / (covered * channels) as f64, covered))
}

fn joint_mask(rendered: &Rendered, target: &RgbdFrame) -> Result<Vec<bool>> {
    if rendered.width != target.width() {
        return Err(Error::shape("loss", "width", target.width(), rendered.width));
    }
    if rendered.height != target.height() {
        return Err(Error::shape("loss", "height", target.height(), rendered.height));
    }
    Ok(rendered.mask.iter().zip(target.valid_mask()).map(|(a, b)| *a && *b).collect())
}

/// Masked L1 between rendered colors and `target` over pixels covered by
/// the render and valid in the target.
pub fn photometric_loss(rendered: &Rendered, target: &RgbdFrame) -> Result<(f64, usize)> {
    let mask = joint_mask(rendered, target)?;
    masked_l1(&rendered.rgb, target.rgb(), &mask, 3)
}

/// Masked L1 between rendered and target depth, in meters.
pub fn depth_loss(rendered: &Rendered, target: &RgbdFrame) -> Result<(f64, usize)> {
    let mask = joint_mask(rendered, target)?;
    masked_l1(&rendered.depth, target.depth(), &mask, 1)
}

/// Weighted mean residual `Σ wᵢ‖pose(xᵢ) − yᵢ‖ / Σ wᵢ` in meters.
pub fn correspondence_loss(c: &CorrespondenceSet, reference: &PointCloud, target: &PointCloud, pose: &Pose) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::Empty("correspondence_loss: correspondence set"));
    }
    let (x, y, w) = gather_pairs(c, reference, target)?;
    weighted_residual(&x, &y, &w, pose)
}

fn weighted_residual(x: &[nalgebra::Point3<f64>], y: &[nalgebra::Point3<f64>], w: &[f64], pose: &Pose) -> Result<f64> {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("correspondence weights sum to zero".into()));
    }
    let sum: f64 = x.iter().zip(y).zip(w).map(|((p, q), wi)| wi * (pose.apply(p) - q).norm()).sum();
    Ok(sum / total)
}

/// Per-term values of [`total_loss`], each averaged over both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub photometric: f64,
    pub depth: f64,
    pub correspondence: f64,
    pub total: f64,
}

/// λ-weighted photometric, depth and correspondence terms evaluated from
/// reference to target under `pose` and back under its inverse, then
/// averaged. Correspondence indices refer to the frames' unprojected clouds.
pub fn total_loss(
    frame_r: &RgbdFrame,
    frame_t: &RgbdFrame,
    pose: &Pose,
    c: &CorrespondenceSet,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let cloud_r = frame_r.unproject();
    let cloud_t = frame_t.unproject();
    let inv = pose.inverse();

    let fwd = render_points(&cloud_r, pose, frame_t.intrinsics())?;
    let bwd = render_points(&cloud_t, &inv, frame_r.intrinsics())?;
    let photometric = 0.5 * (photometric_loss(&fwd, frame_t)?.0 + photometric_loss(&bwd, frame_r)?.0);
    let depth = 0.5 * (depth_loss(&fwd, frame_t)?.0 + depth_loss(&bwd, frame_r)?.0);

    if c.is_empty() {
        return Err(Error::Empty("total_loss: correspondence set"));
    }
    let (x, y, w) = gather_pairs(c, &cloud_r, &cloud_t)?;
    let correspondence = 0.5 * (weighted_residual(&x, &y, &w, pose)? + weighted_residual(&y, &x, &w, &inv)?);

    let total = weights.photo * photometric + weights.depth * depth + weights.corr * correspondence;
    Ok(LossBreakdown {
        photometric,
        depth,
        correspondence,
        total,
    })
}
