//! Local linear transformation fusion.
//!
//! A bilateral grid of geometric coefficients is *sliced* with the guidance
//! map to give every full-resolution pixel its own coefficient vector. That
//! vector is read as `n_group` small square matrices which are *applied*
//! group-wise to the visual feature vector of the pixel. Fused maps of all
//! scales are then averaged.

use crate::config::{LltConfig, PipelineConfig};
use crate::error::{Error, Result};
use crate::extract::{rgb_tensor, BilateralGrid, FeatureMap, GaveModel, GuidanceMap};
use crate::frame::{RgbdFrame, SPATIAL_MULTIPLE};
use crate::preproc::{preprocess_depth, FillReport};
use crate::tensor::Tensor;
use crate::weights::ModelWeights;

/// Per-pixel coefficients. The flat vector of a pixel has
/// `n_group · m · m` entries (`m = D_c / n_group`); matrix `g` is the
/// row-major block `[g·m·m, (g+1)·m·m)`, i.e. rows `g·m .. (g+1)·m` of the
/// `D_c × m` reshape.
#[derive(Debug, Clone, PartialEq)]
pub struct SlicedCoefficients {
    height: usize,
    width: usize,
    n_group: usize,
    group_size: usize,
    data: Vec<f32>,
}

impl SlicedCoefficients {
    pub fn new(height: usize, width: usize, n_group: usize, group_size: usize, data: Vec<f32>) -> Result<Self> {
        let per_pixel = n_group * group_size * group_size;
        if per_pixel == 0 {
            return Err(Error::InvalidArgument("empty coefficient groups".into()));
        }
        if data.len() != height * width * per_pixel {
            return Err(Error::shape("sliced coefficients", "length", height * width * per_pixel, data.len()));
        }
        Ok(Self {
            height,
            width,
            n_group,
            group_size,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_group(&self) -> usize {
        self.n_group
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    /// Flat length per pixel (`D_d / n_grid`).
    pub fn per_pixel(&self) -> usize {
        self.n_group * self.group_size * self.group_size
    }

    pub fn flat_shape(&self) -> [usize; 3] {
        [self.height, self.width, self.per_pixel()]
    }

    pub fn grouped_shape(&self) -> [usize; 5] {
        [self.height, self.width, self.n_group, self.group_size, self.group_size]
    }

    pub fn flat(&self, y: usize, x: usize) -> &[f32] {
        let n = self.per_pixel();
        &self.data[(y * self.width + x) * n..][..n]
    }

    /// Row-major `m × m` matrix of group `g` at pixel `(y, x)`.
    pub fn matrix(&self, y: usize, x: usize, g: usize) -> &[f32] {
        let mm = self.group_size * self.group_size;
        &self.flat(y, x)[g * mm..][..mm]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.flat_shape().to_vec(), self.data.clone()).expect("extents checked at construction")
    }
}

/// Clamped linear interpolation setup along one axis with `n` nodes.
#[inline]
fn lerp_axis(coord: f64, n: usize) -> (usize, usize, f32) {
    let c = coord.clamp(0.0, (n - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, (c - i0 as f64) as f32)
}

/// Continuous grid coordinate of pixel row/column `p`: cell centers sit at
/// `(i + 0.5) · 8 - 0.5` in pixel space.
#[inline]
pub fn grid_coord(p: usize) -> f64 {
    (p as f64 + 0.5) / SPATIAL_MULTIPLE as f64 - 0.5
}

/// Continuous guidance-depth coordinate of guidance value `g`.
#[inline]
pub fn depth_coord(g: f32, n_grid: usize) -> f64 {
    g as f64 * n_grid as f64 - 0.5
}

/// Trilinearly samples `grid` at every pixel of `guidance`.
pub fn slice(grid: &BilateralGrid, guidance: &GuidanceMap, cfg: &LltConfig) -> Result<SlicedCoefficients> {
    let (h, w) = (guidance.height(), guidance.width());
    let (gh, gw) = (grid.grid_height(), grid.grid_width());
    if gh != h / SPATIAL_MULTIPLE || h % SPATIAL_MULTIPLE != 0 {
        return Err(Error::shape("slice", "grid height", h / SPATIAL_MULTIPLE, gh));
    }
    if gw != w / SPATIAL_MULTIPLE || w % SPATIAL_MULTIPLE != 0 {
        return Err(Error::shape("slice", "grid width", w / SPATIAL_MULTIPLE, gw));
    }
    if grid.n_grid() != cfg.n_grid {
        return Err(Error::shape("slice", "grid depth", cfg.n_grid, grid.n_grid()));
    }
    let n = grid.cell_len();
    if n != cfg.coeffs_per_pixel() {
        return Err(Error::shape("slice", "coefficients per cell", cfg.coeffs_per_pixel(), n));
    }
    let nz = grid.n_grid();
    let rows: Vec<_> = (0..h).map(|y| lerp_axis(grid_coord(y), gh)).collect();
    let cols: Vec<_> = (0..w).map(|x| lerp_axis(grid_coord(x), gw)).collect();

    let mut data = vec![0.0f32; h * w * n];
    for y in 0..h {
        let (y0, y1, fy) = rows[y];
        for x in 0..w {
            let (x0, x1, fx) = cols[x];
            let (z0, z1, fz) = lerp_axis(depth_coord(guidance.at(y, x), nz), nz);
            let c00 = grid.column(y0, x0);
            let c01 = grid.column(y0, x1);
            let c10 = grid.column(y1, x0);
            let c11 = grid.column(y1, x1);
            let out = &mut data[(y * w + x) * n..][..n];
            // nested lerps reproduce constant fields and nodes exactly
            let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
            for (j, o) in out.iter_mut().enumerate() {
                let (i0, i1) = (j * nz + z0, j * nz + z1);
                let v00 = lerp(c00[i0], c00[i1], fz);
                let v01 = lerp(c01[i0], c01[i1], fz);
                let v10 = lerp(c10[i0], c10[i1], fz);
                let v11 = lerp(c11[i0], c11[i1], fz);
                *o = lerp(lerp(v00, v01, fx), lerp(v10, v11, fx), fy);
            }
        }
    }
    SlicedCoefficients::new(h, w, cfg.n_group, cfg.group_size(), data)
}

/// Group-wise per-pixel matrix–vector products, concatenated channel-wise.
pub fn apply_llt(coeffs: &SlicedCoefficients, v: &FeatureMap) -> Result<FeatureMap> {
    let m = coeffs.group_size();
    let groups = coeffs.n_group();
    if v.channels() != groups * m {
        return Err(Error::shape("apply_llt", "feature channels", groups * m, v.channels()));
    }
    if v.height() != coeffs.height() {
        return Err(Error::shape("apply_llt", "height", coeffs.height(), v.height()));
    }
    if v.width() != coeffs.width() {
        return Err(Error::shape("apply_llt", "width", coeffs.width(), v.width()));
    }
    let c = v.channels();
    let mut out = vec![0.0f32; v.height() * v.width() * c];
    for y in 0..v.height() {
        for x in 0..v.width() {
            let feat = v.pixel(y, x);
            let a = coeffs.flat(y, x);
            let dst = &mut out[(y * v.width() + x) * c..][..c];
            for g in 0..groups {
                let vg = &feat[g * m..][..m];
                let ag = &a[g * m * m..][..m * m];
                for r in 0..m {
                    let row = &ag[r * m..][..m];
                    dst[g * m + r] = row.iter().zip(vg).map(|(p, q)| p * q).sum();
                }
            }
        }
    }
    FeatureMap::new(Tensor::new(vec![v.height(), v.width(), c], out)?, v.scale_index())
}

/// Elementwise mean of same-shaped maps.
pub fn fuse_multiscale(maps: &[FeatureMap]) -> Result<FeatureMap> {
    let first = maps.first().ok_or(Error::Empty("fusion input"))?;
    if maps.len() == 1 {
        return Ok(first.clone());
    }
    let shape = first.values().shape();
    let mut acc = vec![0.0f32; first.values().len()];
    for m in maps {
        if m.values().shape() != shape {
            let axis = (0..3).find(|&i| m.values().shape()[i] != shape[i]).unwrap_or(0);
            return Err(Error::shape("fuse_multiscale", ["height", "width", "channels"][axis], shape[axis], m.values().shape()[axis]));
        }
        for (a, v) in acc.iter_mut().zip(m.values().data()) {
            *a += v;
        }
    }
    let n = maps.len() as f32;
    for a in acc.iter_mut() {
        *a /= n;
    }
    FeatureMap::new(Tensor::new(shape.to_vec(), acc)?, 0)
}

/// Every intermediate of one extractor pass.
#[derive(Debug, Clone)]
pub struct GaveOutput {
    pub visual: Vec<FeatureMap>,
    pub grids: Vec<BilateralGrid>,
    pub guidance: GuidanceMap,
    pub sliced: Vec<SlicedCoefficients>,
    pub fused: Vec<FeatureMap>,
    pub features: FeatureMap,
    pub fill_report: FillReport,
}

/// Full extractor pass keeping intermediates.
pub fn extract_features_detailed(frame: &RgbdFrame, model: &GaveModel, cfg: &PipelineConfig) -> Result<GaveOutput> {
    if *model.config() != cfg.llt {
        return Err(Error::Config("model was built for a different extractor configuration".into()));
    }
    let (depth, fill_report) = preprocess_depth(frame, &cfg.jbf, &cfg.depth_norm)?;
    let visual = model.visual(&rgb_tensor(frame))?;
    let grids = model.geometric(&depth)?;
    let guidance = model.guidance(&depth)?;
    let sliced = grids
        .iter()
        .map(|b| slice(b, &guidance, &cfg.llt))
        .collect::<Result<Vec<_>>>()?;
    let fused = sliced
        .iter()
        .zip(&visual)
        .map(|(a, v)| apply_llt(a, v))
        .collect::<Result<Vec<_>>>()?;
    let features = fuse_multiscale(&fused)?;
    Ok(GaveOutput {
        visual,
        grids,
        guidance,
        sliced,
        fused,
        features,
        fill_report,
    })
}

/// Fused `H×W×D_c` features of a frame.
pub fn extract_features(frame: &RgbdFrame, model: &GaveModel, cfg: &PipelineConfig) -> Result<FeatureMap> {
    Ok(extract_features_detailed(frame, model, cfg)?.features)
}

/// [`extract_features`] straight from a weight set.
pub fn extract_features_with_weights(frame: &RgbdFrame, weights: &ModelWeights, cfg: &PipelineConfig) -> Result<FeatureMap> {
    extract_features(frame, &GaveModel::new(weights, &cfg.llt)?, cfg)
}
