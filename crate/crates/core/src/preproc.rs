//! Depth hole filling guided by color, and depth normalization for the
//! geometric and guidance branches.

use crate::config::{DepthNormalization, JbfParams};
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::tensor::{sigmoid_scalar, Tensor};

/// What [`fill_holes_jbf`] did to a frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FillReport {
    /// Filter passes that filled at least one pixel.
    pub iterations: usize,
    pub filled_by_filter: usize,
    /// Holes no pass could reach, set to the median valid depth.
    pub filled_by_median: usize,
}

/// Fills depth holes with a joint bilateral average of valid neighbors.
///
/// Each pass fills every hole whose window holds at least one valid pixel,
/// weighting neighbor `q` of hole `p` by
/// `exp(-|p - q|² / 2σs²) · exp(-|rgb(p) - rgb(q)|² / 2σr²)`. Passes read
/// the previous pass's depth only. Holes still empty after `max_iterations`
/// get the median of the originally valid depths. Valid pixels are never
/// modified.
pub fn fill_holes_jbf(frame: &RgbdFrame, p: &JbfParams) -> Result<(RgbdFrame, FillReport)> {
    p.validate()?;
    if frame.valid_count() == 0 {
        return Err(Error::NoValidDepth);
    }
    let (w, h) = (frame.width(), frame.height());
    let r = p.window_radius as isize;
    let inv_s = 1.0 / (2.0 * p.sigma_spatial * p.sigma_spatial);
    let inv_r = 1.0 / (2.0 * p.sigma_range * p.sigma_range);
    let spatial: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| ((dy * dy + dx * dx) as f64 * -inv_s).exp()))
        .collect();
    let span = (2 * r + 1) as usize;

    let mut depth = frame.depth().to_vec();
    let mut report = FillReport::default();
    for _ in 0..p.max_iterations {
        let prev = depth.clone();
        let mut filled = 0;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if prev[i] > 0.0 {
                    continue;
                }
                let c = frame.pixel_rgb(y, x);
                // mean of deviations from the first neighbor, so a constant
                // neighborhood reproduces its depth exactly
                let mut reference = None;
                let (mut num, mut den) = (0.0f64, 0.0f64);
                for dy in -r..=r {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx = x as isize + dx;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        let j = yy as usize * w + xx as usize;
                        let d = prev[j];
                        if d <= 0.0 {
                            continue;
                        }
                        let q = frame.pixel_rgb(yy as usize, xx as usize);
                        let dc: f64 = (0..3).map(|k| ((c[k] - q[k]) as f64).powi(2)).sum();
                        let wgt = spatial[(dy + r) as usize * span + (dx + r) as usize] * (-dc * inv_r).exp();
                        let base = *reference.get_or_insert(d as f64);
                        num += wgt * (d as f64 - base);
                        den += wgt;
                    }
                }
                if let Some(base) = reference {
                    // color weights can underflow; fall back to the plain
                    // first-found neighbor rather than dividing by zero
                    let v = if den > 0.0 { base + num / den } else { base };
                    depth[i] = v as f32;
                    filled += 1;
                }
            }
        }
        if filled == 0 {
            break;
        }
        report.iterations += 1;
        report.filled_by_filter += filled;
    }

    let remaining = depth.iter().filter(|&&d| d <= 0.0).count();
    if remaining > 0 {
        let median = median_valid_depth(frame);
        for d in depth.iter_mut().filter(|d| **d <= 0.0) {
            *d = median;
        }
        report.filled_by_median = remaining;
    }
    Ok((frame.with_depth(depth)?, report))
}

fn median_valid_depth(frame: &RgbdFrame) -> f32 {
    let mut valid: Vec<f32> = frame.depth().iter().copied().filter(|&d| d > 0.0).collect();
    valid.sort_by(f32::total_cmp);
    valid[valid.len() / 2]
}

/// Depth mapped into `[0, 1)`, stored `H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepth {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl NormalizedDepth {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape("normalized depth", "length", width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("normalized depth value {v} outside [0, 1)")));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The map as an `[H, W, 1]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, 1], self.values.clone()).expect("extents checked at construction")
    }
}

/// `d ↦ sigmoid(a·d + b)` per pixel.
pub fn normalize_depth(width: usize, height: usize, depth: &[f32], n: &DepthNormalization) -> Result<NormalizedDepth> {
    if depth.len() != width * height {
        return Err(Error::shape("normalize_depth", "length", width * height, depth.len()));
    }
    let values = depth.iter().map(|&d| sigmoid_scalar(n.a * d + n.b)).collect();
    NormalizedDepth::new(width, height, values)
}

/// Hole filling followed by normalization, as the extractors consume it.
pub fn preprocess_depth(
    frame: &RgbdFrame,
    jbf: &JbfParams,
    norm: &DepthNormalization,
) -> Result<(NormalizedDepth, FillReport)> {
    let (filled, report) = fill_holes_jbf(frame, jbf)?;
    let nd = normalize_depth(filled.width(), filled.height(), filled.depth(), norm)?;
    Ok((nd, report))
}
