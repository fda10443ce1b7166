use nalgebra::Point3;

use crate::error::{Error, Result};

/// Pinhole intrinsics in pixels. Pixel `(x, y)` is the ray through image
/// coordinate `(x, y)`; there is no half-pixel offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "intrinsics need positive finite focal lengths, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("intrinsics extents must be positive".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({}, {}) outside the {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Intrinsics of the window starting at `(x0, y0)` with the given extents.
    pub fn cropped(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        Self::new(
            self.fx,
            self.fy,
            self.cx - x0 as f64,
            self.cy - y0 as f64,
            width,
            height,
        )
    }

    /// Camera-frame point seen at pixel `(x, y)` with z-depth `depth`.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> Point3<f64> {
        Point3::new(
            depth * (x - self.cx) / self.fx,
            depth * (y - self.cy) / self.fy,
            depth,
        )
    }

    /// Continuous image coordinates `(x, y)` of a camera-frame point, or
    /// `None` when it is not in front of the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    /// Nearest pixel a point lands on, if it lands inside the image.
    pub fn project_to_pixel(&self, p: &Point3<f64>) -> Option<(usize, usize)> {
        let (u, v) = self.project(p)?;
        let (x, y) = (u.round(), v.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some((y as usize, x as usize))
    }
}
