//! Geometry-aware RGB-D features fused through local linear transformations,
//! plus the matching, alignment, rendering and evaluation pieces needed to
//! register frame pairs with them.

pub mod alignment;
pub mod camera;
pub mod cloud;
pub mod config;
pub mod correspondence;
pub mod error;
pub mod extract;
pub mod frame;
pub mod io;
pub mod llt;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod pose;
pub mod preproc;
pub mod render;
pub mod selftest;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
