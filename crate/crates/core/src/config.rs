//! Pipeline configuration and its `key = value` text form.
//!
//! Every tunable of the pipeline has a key; config files and `--set`
//! overrides share the same parser, so a hyperparameter sweep is a single
//! flag change.

use std::path::Path;

use crate::error::{Error, Result};

/// Architecture of the feature extractor and its fusion stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LltConfig {
    /// Visual feature channels.
    pub d_c: usize,
    /// Geometric feature channels before the grid reshape.
    pub d_d: usize,
    /// Guidance-depth extent of each bilateral grid.
    pub n_grid: usize,
    pub n_group: usize,
    /// Number of fused scales (1..=3).
    pub n_scales: usize,
    /// Correspondences kept per pair.
    pub k: usize,
}

impl Default for LltConfig {
    fn default() -> Self {
        Self {
            d_c: 64,
            d_d: 768,
            n_grid: 3,
            n_group: 16,
            n_scales: 2,
            k: 400,
        }
    }
}

impl LltConfig {
    pub fn new(d_c: usize, d_d: usize, n_grid: usize, n_group: usize, n_scales: usize, k: usize) -> Result<Self> {
        let cfg = Self {
            d_c,
            d_d,
            n_grid,
            n_group,
            n_scales,
            k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Default architecture with the given grid depth, group count and scale
    /// count; `d_d` is derived so that sliced coefficients reshape exactly into
    /// the per-group matrices.
    pub fn for_sweep(n_grid: usize, n_group: usize, n_scales: usize) -> Result<Self> {
        let base = Self::default();
        if n_group == 0 || base.d_c % n_group != 0 {
            return Err(Error::Config(format!(
                "n_group = {n_group} does not divide d_c = {}",
                base.d_c
            )));
        }
        let d_d = n_grid * base.d_c * (base.d_c / n_group);
        Self::new(base.d_c, d_d, n_grid, n_group, n_scales, base.k)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_c", self.d_c),
            ("d_d", self.d_d),
            ("n_grid", self.n_grid),
            ("n_group", self.n_group),
            ("k", self.k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_d.is_multiple_of(self.n_grid) {
            return Err(Error::Config(format!(
                "d_d = {} is not divisible by n_grid = {}",
                self.d_d, self.n_grid
            )));
        }
        if !self.d_c.is_multiple_of(self.n_group) {
            return Err(Error::Config(format!(
                "d_c = {} is not divisible by n_group = {}",
                self.d_c, self.n_group
            )));
        }
        if self.coeffs_per_pixel() != self.d_c * self.group_size() {
            return Err(Error::Config(format!(
                "d_d / n_grid = {} must equal d_c * (d_c / n_group) = {}",
                self.coeffs_per_pixel(),
                self.d_c * self.group_size()
            )));
        }
        if !(1..=3).contains(&self.n_scales) {
            return Err(Error::Config(format!("n_scales = {} not in 1..=3", self.n_scales)));
        }
        Ok(())
    }

    /// Channels per group, i.e. the side of each per-pixel matrix.
    pub fn group_size(&self) -> usize {
        self.d_c / self.n_group
    }

    /// Length of the sliced coefficient vector at each pixel.
    pub fn coeffs_per_pixel(&self) -> usize {
        self.d_d / self.n_grid
    }
}

/// Joint bilateral hole filling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JbfParams {
    pub window_radius: usize,
    pub sigma_spatial: f64,
    pub sigma_range: f64,
    pub max_iterations: usize,
}

impl Default for JbfParams {
    fn default() -> Self {
        Self {
            window_radius: 5,
            sigma_spatial: 3.0,
            sigma_range: 0.1,
            max_iterations: 8,
        }
    }
}

impl JbfParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_radius == 0
            || self.max_iterations == 0
            || !(self.sigma_spatial > 0.0)
            || !(self.sigma_range > 0.0)
        {
            return Err(Error::Config(format!("JBF parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Depth normalization `d ↦ sigmoid(a·d + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthNormalization {
    /// Per meter.
    pub a: f32,
    pub b: f32,
}

impl Default for DepthNormalization {
    fn default() -> Self {
        Self { a: 0.5, b: -1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Reference points considered, subsampled by uniform stride above this.
    pub max_ref_points: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { max_ref_points: 5000 }
    }
}

/// Hypothesize-and-verify alignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignParams {
    pub n_hyp: usize,
    pub subset_size: usize,
    /// Inlier residual threshold in meters.
    pub inlier_tau: f64,
    pub seed: u64,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            n_hyp: 128,
            subset_size: 10,
            inlier_tau: 0.05,
            seed: 0,
        }
    }
}

impl AlignParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_hyp == 0 || self.subset_size < 3 || !(self.inlier_tau > 0.0) {
            return Err(Error::Config(format!(
                "alignment needs n_hyp > 0, subset_size >= 3, inlier_tau > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub photo: f64,
    pub depth: f64,
    pub corr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            photo: 1.0,
            depth: 1.0,
            corr: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PipelineConfig {
    pub llt: LltConfig,
    pub jbf: JbfParams,
    pub depth_norm: DepthNormalization,
    pub matching: MatchParams,
    pub align: AlignParams,
    pub loss: LossWeights,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "d_c",
        "d_d",
        "n_grid",
        "n_group",
        "n_scales",
        "k",
        "jbf.window_radius",
        "jbf.sigma_spatial",
        "jbf.sigma_range",
        "jbf.max_iterations",
        "depth.norm_a",
        "depth.norm_b",
        "match.max_ref_points",
        "align.n_hyp",
        "align.subset_size",
        "align.inlier_tau",
        "align.seed",
        "loss.photo",
        "loss.depth",
        "loss.corr",
    ];

    /// Sets one key. Validation is deferred to [`PipelineConfig::validate`] so
    /// interdependent keys can be changed one at a time.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "d_c" => self.llt.d_c = parse_value(key, v)?,
            "d_d" => self.llt.d_d = parse_value(key, v)?,
            "n_grid" => self.llt.n_grid = parse_value(key, v)?,
            "n_group" => self.llt.n_group = parse_value(key, v)?,
            "n_scales" => self.llt.n_scales = parse_value(key, v)?,
            "k" => self.llt.k = parse_value(key, v)?,
            "jbf.window_radius" => self.jbf.window_radius = parse_value(key, v)?,
            "jbf.sigma_spatial" => self.jbf.sigma_spatial = parse_value(key, v)?,
            "jbf.sigma_range" => self.jbf.sigma_range = parse_value(key, v)?,
            "jbf.max_iterations" => self.jbf.max_iterations = parse_value(key, v)?,
            "depth.norm_a" => self.depth_norm.a = parse_value(key, v)?,
            "depth.norm_b" => self.depth_norm.b = parse_value(key, v)?,
            "match.max_ref_points" => self.matching.max_ref_points = parse_value(key, v)?,
            "align.n_hyp" => self.align.n_hyp = parse_value(key, v)?,
            "align.subset_size" => self.align.subset_size = parse_value(key, v)?,
            "align.inlier_tau" => self.align.inlier_tau = parse_value(key, v)?,
            "align.seed" => self.align.seed = parse_value(key, v)?,
            "loss.photo" => self.loss.photo = parse_value(key, v)?,
            "loss.depth" => self.loss.depth = parse_value(key, v)?,
            "loss.corr" => self.loss.corr = parse_value(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.apply_assignment(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let l = &self.llt;
        format!(
            "d_c = {}\nd_d = {}\nn_grid = {}\nn_group = {}\nn_scales = {}\nk = {}\n\
             jbf.window_radius = {}\njbf.sigma_spatial = {}\njbf.sigma_range = {}\njbf.max_iterations = {}\n\
             depth.norm_a = {}\ndepth.norm_b = {}\nmatch.max_ref_points = {}\n\
             align.n_hyp = {}\nalign.subset_size = {}\nalign.inlier_tau = {}\nalign.seed = {}\n\
             loss.photo = {}\nloss.depth = {}\nloss.corr = {}\n",
            l.d_c,
            l.d_d,
            l.n_grid,
            l.n_group,
            l.n_scales,
            l.k,
            self.jbf.window_radius,
            self.jbf.sigma_spatial,
            self.jbf.sigma_range,
            self.jbf.max_iterations,
            self.depth_norm.a,
            self.depth_norm.b,
            self.matching.max_ref_points,
            self.align.n_hyp,
            self.align.subset_size,
            self.align.inlier_tau,
            self.align.seed,
            self.loss.photo,
            self.loss.depth,
            self.loss.corr,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.llt.validate()?;
        self.jbf.validate()?;
        self.align.validate()?;
        if self.matching.max_ref_points == 0 {
            return Err(Error::Config("match.max_ref_points must be positive".into()));
        }
        Ok(())
    }
}
