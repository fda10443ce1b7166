use nalgebra::Point3;

use crate::error::{Error, Result};

/// Per-point descriptors stored row-major, `dim` values per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    dim: usize,
    data: Vec<f32>,
}

impl Features {
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "feature buffer of {} values is not a whole number of {dim}-vectors",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// A set of 3-D points in meters with optional per-point attributes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3<f64>>,
    pub colors: Option<Vec<[f32; 3]>>,
    pub features: Option<Features>,
    /// Source pixel `(y, x)` of each point.
    pub pixel_origin: Option<Vec<(u32, u32)>>,
}

impl PointCloud {
    pub fn from_positions(positions: Vec<Point3<f64>>) -> Self {
        Self {
            positions,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if let Some(c) = &self.colors {
            if c.len() != n {
                return Err(Error::shape("point cloud", "colors", n, c.len()));
            }
        }
        if let Some(f) = &self.features {
            if f.len() != n {
                return Err(Error::shape("point cloud", "features", n, f.len()));
            }
        }
        if let Some(p) = &self.pixel_origin {
            if p.len() != n {
                return Err(Error::shape("point cloud", "pixel_origin", n, p.len()));
            }
        }
        if !self.positions.iter().all(|p| p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidArgument("point cloud has non-finite positions".into()));
        }
        Ok(())
    }

    pub fn with_colors(mut self, colors: Vec<[f32; 3]>) -> Self {
        self.colors = Some(colors);
        self
    }

    /// Subset of the cloud at `indices`, carrying every attribute along.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: self.colors.as_ref().map(|c| indices.iter().map(|&i| c[i]).collect()),
            features: self.features.as_ref().map(|f| Features {
                dim: f.dim,
                data: indices.iter().flat_map(|&i| f.row(i).iter().copied()).collect(),
            }),
            pixel_origin: self
                .pixel_origin
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }
}
