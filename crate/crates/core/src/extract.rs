//! The three parallel branches of the geometry-aware feature extractor:
//! visual features from color, bilateral grids of local linear coefficients
//! from depth, and a guidance map from depth.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::LltConfig;
use crate::error::{Error, Result};
use crate::frame::{RgbdFrame, SPATIAL_MULTIPLE};
use crate::preproc::NormalizedDepth;
use crate::tensor::{conv2d, conv_block, sigmoid, ConvParams, Tensor};
use crate::weights::{
    geo_down_name, geo_scale_name, layer_specs, visual_block_name, visual_dilated_name, LayerKind, LayerSpec,
    ModelWeights, GUIDE_BLOCK, GUIDE_CONV,
};

/// Dense `H×W×C` features at one scale of the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
    scale_index: usize,
}

impl FeatureMap {
    pub fn new(values: Tensor, scale_index: usize) -> Result<Self> {
        values.hwc("feature map")?;
        Ok(Self { values, scale_index })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn scale_index(&self) -> usize {
        self.scale_index
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let c = self.channels();
        &self.values.data()[(y * self.width() + x) * c..][..c]
    }
}

/// Downscaled coefficient volume. Stored as an `(H/8)×(W/8)×D_d` tensor and
/// read as the view `(H/8)×(W/8)×(D_d/n_grid)×n_grid`: the value for
/// coefficient `j` at guidance depth `z` sits at channel `j·n_grid + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilateralGrid {
    values: Tensor,
    n_grid: usize,
    scale_index: usize,
}

impl BilateralGrid {
    pub fn new(values: Tensor, n_grid: usize, scale_index: usize) -> Result<Self> {
        let (_, _, d) = values.hwc("bilateral grid")?;
        if n_grid == 0 || d % n_grid != 0 {
            return Err(Error::shape("bilateral grid", "channels mod n_grid", 0, d % n_grid.max(1)));
        }
        Ok(Self {
            values,
            n_grid,
            scale_index,
        })
    }

    pub fn grid_height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn grid_width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn scale_index(&self) -> usize {
        self.scale_index
    }

    /// Coefficients stored per grid cell (`D_d / n_grid`).
    pub fn cell_len(&self) -> usize {
        self.values.shape()[2] / self.n_grid
    }

    /// Extents of the four-axis view.
    pub fn view_shape(&self) -> [usize; 4] {
        [self.grid_height(), self.grid_width(), self.cell_len(), self.n_grid]
    }

    /// Underlying `(H/8)×(W/8)×D_d` tensor.
    pub fn flat(&self) -> &Tensor {
        &self.values
    }

    /// Coefficient `j` of cell `(gy, gx, z)`.
    pub fn at(&self, gy: usize, gx: usize, j: usize, z: usize) -> f32 {
        let d = self.values.shape()[2];
        self.values.data()[(gy * self.grid_width() + gx) * d + j * self.n_grid + z]
    }

    /// All coefficients at spatial cell `(gy, gx)`, in view order `[j][z]`.
    pub fn column(&self, gy: usize, gx: usize) -> &[f32] {
        let d = self.values.shape()[2];
        &self.values.data()[(gy * self.grid_width() + gx) * d..][..d]
    }
}

/// Per-pixel guidance in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl GuidanceMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape("guidance map", "length", width * height, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::InvalidArgument(format!("guidance value {v} outside (0, 1)")));
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

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Deterministic initialization: kernels uniform in `±sqrt(6 / fan_in)`,
/// zero biases, identity normalization.
pub fn init_weights(seed: u64, cfg: &LltConfig) -> Result<ModelWeights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ModelWeights::new();
    for layer in layer_specs(cfg) {
        let fan_in = (layer.in_ch * layer.kernel_shape()[2] * layer.kernel_shape()[3]) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let shape = layer.kernel_shape();
        let n: usize = shape.iter().product();
        let kernel: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        let [(kn, _), (bn, _), (sn, _), (tn, _)] = layer.tensors();
        w.insert(kn, Tensor::new(shape, kernel)?)?;
        w.insert(bn, Tensor::zeros(vec![layer.out_ch]))?;
        w.insert(sn, Tensor::filled(vec![layer.out_ch], 1.0))?;
        w.insert(tn, Tensor::zeros(vec![layer.out_ch]))?;
    }
    Ok(w)
}

/// Convolution layers unpacked from a weight set, ready to run.
#[derive(Debug, Clone)]
pub struct GaveModel {
    cfg: LltConfig,
    layers: BTreeMap<String, (LayerSpec, ConvParams)>,
}

impl GaveModel {
    /// Checks the weights cover `cfg` and unpacks every layer.
    pub fn new(weights: &ModelWeights, cfg: &LltConfig) -> Result<Self> {
        cfg.validate()?;
        weights.validate(cfg)?;
        Self::with_layers(weights, cfg, |_| true)
    }

    fn with_layers(weights: &ModelWeights, cfg: &LltConfig, keep: impl Fn(&str) -> bool) -> Result<Self> {
        cfg.validate()?;
        let mut layers = BTreeMap::new();
        for spec in layer_specs(cfg).into_iter().filter(|l| keep(&l.name)) {
            let params = weights.conv_params(&spec)?;
            layers.insert(spec.name.clone(), (spec, params));
        }
        Ok(Self { cfg: *cfg, layers })
    }

    pub fn config(&self) -> &LltConfig {
        &self.cfg
    }

    fn run(&self, name: &str, input: &Tensor) -> Result<Tensor> {
        let (spec, params) = self
            .layers
            .get(name)
            .ok_or_else(|| Error::MissingWeight { layer: name.to_string() })?;
        match spec.kind {
            LayerKind::Block => conv_block(input, params),
            LayerKind::Conv => conv2d(input, params),
        }
    }

    /// `[V^1 .. V^n_scales]`, each `H×W×D_c`.
    pub fn visual(&self, rgb: &Tensor) -> Result<Vec<FeatureMap>> {
        let (_, _, c) = rgb.hwc("extract_visual")?;
        if c != 3 {
            return Err(Error::shape("extract_visual", "input channels", 3, c));
        }
        let mut v = self.run(visual_block_name(), rgb)?;
        let mut out = Vec::with_capacity(self.cfg.n_scales);
        for s in 1..=self.cfg.n_scales {
            v = self.run(&visual_dilated_name(s), &v)?;
            out.push(FeatureMap::new(v.clone(), s)?);
        }
        Ok(out)
    }

    /// `[B^1 .. B^n_scales]`, each viewed `(H/8)×(W/8)×(D_d/n_grid)×n_grid`.
    pub fn geometric(&self, d: &NormalizedDepth) -> Result<Vec<BilateralGrid>> {
        for (axis, e) in [("height", d.height()), ("width", d.width())] {
            if e % SPATIAL_MULTIPLE != 0 {
                return Err(Error::shape("extract_geometric", format!("{axis} mod 8"), 0, e % SPATIAL_MULTIPLE));
            }
        }
        let mut b = d.to_tensor();
        for i in 0..3 {
            b = self.run(&geo_down_name(i), &b)?;
        }
        let mut out = Vec::with_capacity(self.cfg.n_scales);
        for s in 1..=self.cfg.n_scales {
            b = self.run(&geo_scale_name(s), &b)?;
            out.push(BilateralGrid::new(b.clone(), self.cfg.n_grid, s)?);
        }
        Ok(out)
    }

    pub fn guidance(&self, d: &NormalizedDepth) -> Result<GuidanceMap> {
        let g = self.run(GUIDE_BLOCK, &d.to_tensor())?;
        let g = sigmoid(&self.run(GUIDE_CONV, &g)?);
        GuidanceMap::new(d.width(), d.height(), g.into_data())
    }
}

/// Color of a frame as an `H×W×3` tensor.
pub fn rgb_tensor(frame: &RgbdFrame) -> Tensor {
    Tensor::new(vec![frame.height(), frame.width(), 3], frame.rgb().to_vec()).expect("frame extents are consistent")
}

pub fn extract_visual(rgb: &Tensor, weights: &ModelWeights, cfg: &LltConfig) -> Result<Vec<FeatureMap>> {
    GaveModel::with_layers(weights, cfg, |n| n.starts_with("visual."))?.visual(rgb)
}

pub fn extract_geometric(d: &NormalizedDepth, weights: &ModelWeights, cfg: &LltConfig) -> Result<Vec<BilateralGrid>> {
    GaveModel::with_layers(weights, cfg, |n| n.starts_with("geo."))?.geometric(d)
}

pub fn extract_guidance(d: &NormalizedDepth, weights: &ModelWeights, cfg: &LltConfig) -> Result<GuidanceMap> {
    GaveModel::with_layers(weights, cfg, |n| n.starts_with("guide."))?.guidance(d)
}
