use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::{Axis, ComplexGrid, Domain, RealGrid};

/// Per-shot binary sampling pattern over `(ky, kx)`.
///
/// Interleaved masks give shot `j` (0-based) the phase-encode lines
/// `j, j + J, j + 2J, ...`; partial Fourier then drops every line with index
/// `>= ceil(r * ny)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    shots: usize,
    pattern: MaskPattern,
    ny: usize,
    nx: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskPattern {
    Interleaved { interleave: usize, pf_rate: f64 },
    Custom,
}

/// Number of lines kept by partial Fourier at rate `r`.
pub fn partial_fourier_lines(ny: usize, r: f64) -> usize {
    ((r * ny as f64) - 1e-9).ceil().clamp(0.0, ny as f64) as usize
}

impl SamplingMask {
    pub fn new(shots: usize, interleave: usize, ny: usize, nx: usize, pf_rate: f64) -> Result<Self> {
        if shots == 0 || interleave == 0 {
            return Err(PiddError::InvalidConfig(
                "mask needs at least one shot and interleave >= 1".into(),
            ));
        }
        if !(pf_rate > 0.0 && pf_rate <= 1.0) {
            return Err(PiddError::InvalidConfig(format!(
                "partial Fourier rate {pf_rate} outside (0, 1]"
            )));
        }
        let keep = partial_fourier_lines(ny, pf_rate);
        let mut data = vec![0.0; shots * ny * nx];
        for j in 0..shots {
            for y in (j % interleave..keep).step_by(interleave) {
                data[(j * ny + y) * nx..(j * ny + y + 1) * nx].fill(1.0);
            }
        }
        Ok(SamplingMask {
            shots,
            pattern: MaskPattern::Interleaved {
                interleave,
                pf_rate,
            },
            ny,
            nx,
            data,
        })
    }

    /// Standard interleaved acquisition: `J` shots with interleave `J`.
    pub fn interleaved(shots: usize, ny: usize, nx: usize, pf_rate: f64) -> Result<Self> {
        Self::new(shots, shots, ny, nx, pf_rate)
    }

    /// Every shot samples every line.
    pub fn full(shots: usize, ny: usize, nx: usize) -> Result<Self> {
        Self::new(shots, 1, ny, nx, 1.0)
    }

    /// Arbitrary 0/1 pattern from a `[J, ny, nx]` grid.
    pub fn from_grid(grid: &RealGrid) -> Result<Self> {
        if grid.ndim() != 3 {
            return Err(PiddError::Dimension(format!(
                "mask grid must be [J, ny, nx], got {:?}",
                grid.dims()
            )));
        }
        if let Some(v) = grid.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(PiddError::InvalidInput(format!("mask value {v} is not 0 or 1")));
        }
        let d = grid.dims();
        Ok(SamplingMask {
            shots: d[0],
            pattern: MaskPattern::Custom,
            ny: d[1],
            nx: d[2],
            data: grid.data().to_vec(),
        })
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn pattern(&self) -> MaskPattern {
        self.pattern
    }

    /// Partial Fourier rate; custom patterns report 1.
    pub fn pf_rate(&self) -> f64 {
        match self.pattern {
            MaskPattern::Interleaved { pf_rate, .. } => pf_rate,
            MaskPattern::Custom => 1.0,
        }
    }

    pub fn shot(&self, j: usize) -> &[f64] {
        let len = self.ny * self.nx;
        &self.data[j * len..(j + 1) * len]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Phase-encode lines of shot `j` with at least one sampled entry.
    pub fn sampled_lines(&self, j: usize) -> Vec<usize> {
        self.shot(j)
            .chunks_exact(self.nx)
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
            .map(|(y, _)| y)
            .collect()
    }

    /// Number of shots sampling each `(ky, kx)` entry.
    pub fn coverage(&self) -> Vec<f64> {
        let len = self.ny * self.nx;
        let mut cov = vec![0.0; len];
        for j in 0..self.shots {
            for (c, m) in cov.iter_mut().zip(self.shot(j)) {
                *c += m;
            }
        }
        cov
    }

    pub fn to_grid(&self) -> RealGrid {
        RealGrid::new(
            vec![self.shots, self.ny, self.nx],
            vec![Axis::Shot, Axis::FreqY, Axis::FreqX],
            self.data.clone(),
        )
        .expect("mask dims are consistent")
    }

    fn check(&self, k: &ComplexGrid) -> Result<usize> {
        let (ny, nx) = k.require_domain(Domain::Kspace)?;
        if k.ndim() < 3 || k.roles()[0] != Axis::Shot || k.dims()[0] != self.shots {
            return Err(PiddError::ShapeMismatch {
                expected: vec![self.shots, self.ny, self.nx],
                found: k.dims().to_vec(),
            });
        }
        if (ny, nx) != (self.ny, self.nx) {
            return Err(PiddError::ShapeMismatch {
                expected: vec![self.shots, self.ny, self.nx],
                found: k.dims().to_vec(),
            });
        }
        Ok(k.planes() / self.shots)
    }

    /// Zero every unsampled entry in place; `k` is `[J, ..., ky, kx]`.
    pub fn apply_in_place(&self, k: &mut ComplexGrid) -> Result<()> {
        let per_shot = self.check(k)?;
        for p in 0..k.planes() {
            let m = self.shot(p / per_shot);
            for (z, &w) in k.plane_mut(p).iter_mut().zip(m) {
                if w == 0.0 {
                    *z = Default::default();
                }
            }
        }
        Ok(())
    }
}

/// Sampling operator: keep sampled entries, zero the rest.
pub fn apply_mask(k: &ComplexGrid, mask: &SamplingMask) -> Result<ComplexGrid> {
    let mut out = k.clone();
    mask.apply_in_place(&mut out)?;
    Ok(out)
}

/// Adjoint of [`apply_mask`]: zero filling, identical for a 0/1 diagonal.
pub fn adjoint_mask(k: &ComplexGrid, mask: &SamplingMask) -> Result<ComplexGrid> {
    apply_mask(k, mask)
}
