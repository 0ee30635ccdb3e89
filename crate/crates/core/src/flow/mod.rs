//! Dense optical flow: estimation, color visualisation, `.flo` I/O and the
//! clip preprocessing that pairs each frame with the flow that led to it.

mod color;
mod flo;
mod horn_schunck;
mod preprocess;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use color::{flow_to_color, wheel_color, wheel_position, COLOR_WHEEL_SIZE};
pub use flo::{read_flo, read_flo_file, write_flo, write_flo_file, FLO_MAGIC};
pub use horn_schunck::estimate_flow;
pub use preprocess::{preprocess_clip, subsample_indices, FramePair};

/// Per-pixel displacement `(u, v)` in pixels, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} flow field needs {} components, got u={} v={}",
                width * height,
                u.len(),
                v.len()
            )));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("flow field component".into()));
        }
        Ok(Self {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    /// Largest vector magnitude in the field.
    pub fn max_magnitude(&self) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    pub fn mean_u(&self) -> f64 {
        self.u.iter().sum::<f64>() / self.u.len() as f64
    }

    pub fn mean_v(&self) -> f64 {
        self.v.iter().sum::<f64>() / self.v.len() as f64
    }

    /// Mean Euclidean distance to a constant ground-truth displacement.
    pub fn mean_endpoint_error(&self, truth: (f64, f64)) -> f64 {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(u, v)| (u - truth.0).hypot(v - truth.1))
            .sum::<f64>()
            / self.u.len() as f64
    }
}

/// Horn–Schunck solver settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    /// Smoothness weight, in units of 8-bit intensity.
    pub alpha: f64,
    /// Jacobi sweeps per warp.
    pub iterations: usize,
    pub pyramid_levels: usize,
    pub warps_per_level: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            alpha: 15.0,
            iterations: 100,
            pyramid_levels: 3,
            warps_per_level: 2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "flow alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.iterations == 0 || self.pyramid_levels == 0 || self.warps_per_level == 0 {
            return Err(Error::InvalidArgument(
                "flow iterations, pyramid_levels and warps_per_level must be ≥ 1".into(),
            ));
        }
        Ok(())
    }
}
