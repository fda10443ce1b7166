use crate::camera::Intrinsics;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Spatial extents of every frame are multiples of this (the geometric
/// branch downsamples three times by 2).
pub const SPATIAL_MULTIPLE: usize = 8;

/// One RGB-D observation. Color is `[0, 1]` RGB stored `H×W×3`, depth is
/// z-depth in meters with `0` marking a hole.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    width: usize,
    height: usize,
    rgb: Vec<f32>,
    depth: Vec<f32>,
    valid: Vec<bool>,
    intrinsics: Intrinsics,
}

impl RgbdFrame {
    pub fn new(rgb: Vec<f32>, depth: Vec<f32>, intrinsics: Intrinsics) -> Result<Self> {
        intrinsics.validate()?;
        let (width, height) = (intrinsics.width, intrinsics.height);
        if width % SPATIAL_MULTIPLE != 0 {
            return Err(Error::shape("frame", "width mod 8", 0, width % SPATIAL_MULTIPLE));
        }
        if height % SPATIAL_MULTIPLE != 0 {
            return Err(Error::shape("frame", "height mod 8", 0, height % SPATIAL_MULTIPLE));
        }
        let n = width * height;
        if rgb.len() != n * 3 {
            return Err(Error::shape("frame", "rgb length", n * 3, rgb.len()));
        }
        if depth.len() != n {
            return Err(Error::shape("frame", "depth length", n, depth.len()));
        }
        if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("rgb value {v} outside [0, 1]")));
        }
        if let Some(d) = depth.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::InvalidArgument(format!("invalid depth value {d}")));
        }
        let valid = depth.iter().map(|&d| d > 0.0).collect();
        Ok(Self {
            width,
            height,
            rgb,
            depth,
            valid,
            intrinsics,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn rgb(&self) -> &[f32] {
        &self.rgb
    }

    pub fn depth(&self) -> &[f32] {
        &self.depth
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn pixel_rgb(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Same frame with its depth replaced.
    pub fn with_depth(&self, depth: Vec<f32>) -> Result<Self> {
        Self::new(self.rgb.clone(), depth, self.intrinsics)
    }

    /// Back-projects every valid pixel, in row-major pixel order.
    pub fn unproject(&self) -> PointCloud {
        let n = self.valid_count();
        let mut positions = Vec::with_capacity(n);
        let mut colors = Vec::with_capacity(n);
        let mut origin = Vec::with_capacity(n);
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                if !self.valid[i] {
                    continue;
                }
                positions.push(self.intrinsics.unproject(x as f64, y as f64, self.depth[i] as f64));
                colors.push(self.pixel_rgb(y, x));
                origin.push((y as u32, x as u32));
            }
        }
        PointCloud {
            positions,
            colors: Some(colors),
            features: None,
            pixel_origin: Some(origin),
        }
    }
}

/// Largest multiple-of-8 window centered in a `width × height` image, as
/// `(x0, y0, cropped_width, cropped_height)`.
pub fn center_crop_window(width: usize, height: usize) -> Result<(usize, usize, usize, usize)> {
    let cw = width - width % SPATIAL_MULTIPLE;
    let ch = height - height % SPATIAL_MULTIPLE;
    if cw == 0 || ch == 0 {
        return Err(Error::InvalidArgument(format!(
            "{width}x{height} image is smaller than {SPATIAL_MULTIPLE} pixels on a side"
        )));
    }
    Ok(((width - cw) / 2, (height - ch) / 2, cw, ch))
}
