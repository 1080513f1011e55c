use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::RealGrid;
use crate::synth::phantom::{SymTensor, TensorPhantom};

/// Diffusion encoding: unit gradient direction and b-value (s/mm^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionProtocol {
    g: [f64; 3],
    b: f64,
}

impl DiffusionProtocol {
    pub fn new(g: [f64; 3], b: f64) -> Result<Self> {
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(PiddError::InvalidInput(format!(
                "gradient direction {g:?} has norm {n}, expected 1"
            )));
        }
        if !(b >= 0.0) || !b.is_finite() {
            return Err(PiddError::InvalidInput(format!("b-value {b} must be >= 0")));
        }
        Ok(DiffusionProtocol { g, b })
    }

    /// Normalizes `g` first; fails on a zero vector.
    pub fn normalized(g: [f64; 3], b: f64) -> Result<Self> {
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 0.0) {
            return Err(PiddError::InvalidInput("zero gradient direction".into()));
        }
        Self::new([g[0] / n, g[1] / n, g[2] / n], b)
    }

    pub fn g(&self) -> [f64; 3] {
        self.g
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

/// `g^T D g` for a symmetric tensor.
pub fn quadratic_form(d: &SymTensor, g: [f64; 3]) -> f64 {
    let [x, y, z] = g;
    d[0] * x * x
        + d[1] * y * y
        + d[2] * z * z
        + 2.0 * (d[3] * x * y + d[4] * x * z + d[5] * y * z)
}

/// Diffusion-weighted magnitude `m0 * exp(-b g^T D g)` per voxel.
pub fn synth_magnitude(phantom: &TensorPhantom, proto: &DiffusionProtocol) -> RealGrid {
    let mut out = phantom.m0.clone();
    for (m, d) in out.data_mut().iter_mut().zip(&phantom.tensors) {
        if proto.b != 0.0 {
            *m *= (-proto.b * quadratic_form(d, proto.g)).exp();
        }
    }
    out
}
