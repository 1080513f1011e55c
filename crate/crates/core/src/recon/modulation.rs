//! Phase modulations between shots and their k-space kernel form.
//!
//! Shot `j` maps onto shot `i` through `P_ij = P_i conj(P_j) / |P_j|^2` in
//! the image domain, or equivalently through circular convolution with
//! `G_ij = DFT(P_ij) / sqrt(N)` in k-space.

use num_complex::Complex64;

use crate::error::{PiddError, Result};
use crate::fft::fft2c_plane;
use crate::grid::{Axis, ComplexGrid, Domain, RealGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModulationMatrix {
    shots: usize,
    ny: usize,
    nx: usize,
    /// `[i, j, y, x]`, diagonal tiles zero.
    maps: Vec<Complex64>,
}

impl PhaseModulationMatrix {
    /// From complex shot phases `[J, y, x]`. Voxels where `P_j` vanishes
    /// get a zero modulation.
    pub fn from_shot_phases(phases: &ComplexGrid) -> Result<Self> {
        let (ny, nx) = phases.require_domain(Domain::Image)?;
        if phases.ndim() != 3 {
            return Err(PiddError::Dimension(format!(
                "shot phases must be [J, y, x], got {:?}",
                phases.dims()
            )));
        }
        let shots = phases.dims()[0];
        let plane = ny * nx;
        let mut maps = vec![Complex64::default(); shots * shots * plane];
        for i in 0..shots {
            for j in 0..shots {
                if i == j {
                    continue;
                }
                let dst = &mut maps[(i * shots + j) * plane..(i * shots + j + 1) * plane];
                for ((d, pi), pj) in dst.iter_mut().zip(phases.plane(i)).zip(phases.plane(j)) {
                    let den = pj.norm_sqr();
                    *d = if den > 0.0 {
                        pi * pj.conj() / den
                    } else {
                        Complex64::default()
                    };
                }
            }
        }
        Ok(PhaseModulationMatrix {
            shots,
            ny,
            nx,
            maps,
        })
    }

    pub fn from_maps(shots: usize, ny: usize, nx: usize, maps: Vec<Complex64>) -> Result<Self> {
        if maps.len() != shots * shots * ny * nx {
            return Err(PiddError::ShapeMismatch {
                expected: vec![shots, shots, ny, nx],
                found: vec![maps.len()],
            });
        }
        Ok(PhaseModulationMatrix {
            shots,
            ny,
            nx,
            maps,
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

    pub fn get(&self, i: usize, j: usize) -> &[Complex64] {
        let plane = self.ny * self.nx;
        let o = (i * self.shots + j) * plane;
        &self.maps[o..o + plane]
    }

    pub fn maps(&self) -> &[Complex64] {
        &self.maps
    }

    /// `(1/(J-1)) sum_{j != i} P_ij I_j` for shot images `[J, y, x]`.
    pub fn apply(&self, images: &ComplexGrid) -> Result<ComplexGrid> {
        if self.shots < 2 {
            return Err(PiddError::InvalidConfig(
                "shot interpolation needs at least two shots".into(),
            ));
        }
        let (ny, nx) = images.require_domain(Domain::Image)?;
        crate::error::check_shape(&[self.shots, self.ny, self.nx], images.dims())?;
        let scale = 1.0 / (self.shots - 1) as f64;
        let mut out = ComplexGrid::zeros_like(images);
        for i in 0..self.shots {
            let dst = out.plane_mut(i);
            for j in (0..self.shots).filter(|&j| j != i) {
                for ((d, p), v) in dst.iter_mut().zip(self.get(i, j)).zip(images.plane(j)) {
                    *d += p * v;
                }
            }
            dst.iter_mut().for_each(|d| *d *= scale);
        }
        debug_assert_eq!((ny, nx), (self.ny, self.nx));
        Ok(out)
    }
}

/// Modulations from real phase maps `[J, y, x]` (radians).
pub fn phase_modulations(phases: &RealGrid) -> Result<PhaseModulationMatrix> {
    PhaseModulationMatrix::from_shot_phases(&crate::synth::phase::phase_to_complex(phases))
}

/// Full-grid circular k-space kernels `G_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionKernelSet {
    shots: usize,
    ny: usize,
    nx: usize,
    /// `[i, j, ky, kx]`, DC of each kernel at `(ny/2, nx/2)`.
    kernels: Vec<Complex64>,
    /// Image-domain equivalent of every kernel, cached for fast application.
    modulation: Vec<Complex64>,
}

impl MotionKernelSet {
    pub fn from_kernels(shots: usize, ny: usize, nx: usize, kernels: Vec<Complex64>) -> Result<Self> {
        let plane = ny * nx;
        if kernels.len() != shots * shots * plane {
            return Err(PiddError::ShapeMismatch {
                expected: vec![shots, shots, ny, nx],
                found: vec![kernels.len()],
            });
        }
        let root_n = (plane as f64).sqrt();
        let mut modulation = kernels.clone();
        for p in modulation.chunks_exact_mut(plane) {
            fft2c_plane(p, ny, nx, true);
            p.iter_mut().for_each(|v| *v *= root_n);
        }
        Ok(MotionKernelSet {
            shots,
            ny,
            nx,
            kernels,
            modulation,
        })
    }

    /// All-zero kernels; interpolation then returns zero.
    pub fn zeros(shots: usize, ny: usize, nx: usize) -> Self {
        let n = shots * shots * ny * nx;
        MotionKernelSet {
            shots,
            ny,
            nx,
            kernels: vec![Complex64::default(); n],
            modulation: vec![Complex64::default(); n],
        }
    }

    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }

    pub fn kernel(&self, i: usize, j: usize) -> &[Complex64] {
        let plane = self.ny * self.nx;
        let o = (i * self.shots + j) * plane;
        &self.kernels[o..o + plane]
    }

    /// Back to the image domain: `P_ij = sqrt(N) IDFT(G_ij)`.
    pub fn to_modulations(&self) -> PhaseModulationMatrix {
        PhaseModulationMatrix {
            shots: self.shots,
            ny: self.ny,
            nx: self.nx,
            maps: self.modulation.clone(),
        }
    }

    /// `G X`: `(1/(J-1)) sum_{j != i} G_ij (*) X_j` on coil-combined k-space
    /// `[J, ky, kx]`, evaluated through the image domain.
    pub fn apply(&self, x: &ComplexGrid) -> Result<ComplexGrid> {
        let (ny, nx) = x.require_domain(Domain::Kspace)?;
        crate::error::check_shape(&[self.shots, self.ny, self.nx], x.dims())?;
        if self.shots < 2 {
            return Err(PiddError::InvalidConfig(
                "shot interpolation needs at least two shots".into(),
            ));
        }
        let mut img = x.clone();
        crate::fft::fft2c_planes(img.data_mut(), ny, nx, true);
        let scale = 1.0 / (self.shots - 1) as f64;
        let plane = ny * nx;
        let mut out = ComplexGrid::zeros_like(x);
        for i in 0..self.shots {
            let dst = out.plane_mut(i);
            for j in (0..self.shots).filter(|&j| j != i) {
                let m = &self.modulation[(i * self.shots + j) * plane..(i * self.shots + j + 1) * plane];
                for ((d, p), v) in dst.iter_mut().zip(m).zip(img.plane(j)) {
                    *d += p * v;
                }
            }
            dst.iter_mut().for_each(|d| *d *= scale);
        }
        crate::fft::fft2c_planes(out.data_mut(), ny, nx, false);
        Ok(out)
    }
}

pub fn kernels_from_modulations(pm: &PhaseModulationMatrix) -> MotionKernelSet {
    let plane = pm.ny * pm.nx;
    let inv_root_n = 1.0 / (plane as f64).sqrt();
    let mut kernels = pm.maps.clone();
    for p in kernels.chunks_exact_mut(plane) {
        fft2c_plane(p, pm.ny, pm.nx, false);
        p.iter_mut().for_each(|v| *v *= inv_root_n);
    }
    MotionKernelSet {
        shots: pm.shots,
        ny: pm.ny,
        nx: pm.nx,
        kernels,
        modulation: pm.maps.clone(),
    }
}

/// Direct circular convolution of a centered kernel with centered k-space,
/// both `ny x nx`: `out[k] = sum_q g[q] x[k - q]` on signed frequencies.
pub fn convolve_direct(kernel: &[Complex64], x: &[Complex64], ny: usize, nx: usize) -> Vec<Complex64> {
    let (cy, cx) = (ny / 2, nx / 2);
    let mut out = vec![Complex64::default(); ny * nx];
    for qy in 0..ny {
        for qx in 0..nx {
            let g = kernel[qy * nx + qx];
            if g == Complex64::default() {
                continue;
            }
            for ky in 0..ny {
                let sy = (ky + cy + ny - qy) % ny;
                let row_out = &mut out[ky * nx..(ky + 1) * nx];
                let row_in = &x[sy * nx..(sy + 1) * nx];
                for (kx, o) in row_out.iter_mut().enumerate() {
                    *o += g * row_in[(kx + cx + nx - qx) % nx];
                }
            }
        }
    }
    out
}

/// `J x J` mosaic of the scaled modulations `P_ij / (J-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationMosaic {
    pub shots: usize,
    /// Phase angle per tile in radians, `[J*ny, J*nx]`.
    pub angle: RealGrid,
    pub magnitude: RealGrid,
}

impl ModulationMosaic {
    /// Mean angle of tile `(i, j)`.
    pub fn tile_mean_angle(&self, i: usize, j: usize) -> f64 {
        let (ty, tx) = (self.angle.dims()[0] / self.shots, self.angle.dims()[1] / self.shots);
        let w = self.angle.dims()[1];
        let mut acc = 0.0;
        for y in 0..ty {
            for x in 0..tx {
                acc += self.angle.data()[(i * ty + y) * w + j * tx + x];
            }
        }
        acc / (ty * tx) as f64
    }

    pub fn tile(&self, i: usize, j: usize) -> Vec<f64> {
        let (ty, tx) = (self.angle.dims()[0] / self.shots, self.angle.dims()[1] / self.shots);
        let w = self.angle.dims()[1];
        (0..ty)
            .flat_map(|y| (0..tx).map(move |x| (i * ty + y) * w + j * tx + x))
            .map(|idx| self.angle.data()[idx])
            .collect()
    }
}

pub fn visualize_modulations(pm: &PhaseModulationMatrix) -> Result<ModulationMosaic> {
    let j = pm.shots;
    if j < 2 {
        return Err(PiddError::InvalidConfig("mosaic needs at least two shots".into()));
    }
    let (ny, nx) = (pm.ny, pm.nx);
    let (h, w) = (j * ny, j * nx);
    let scale = 1.0 / (j - 1) as f64;
    let mut angle = vec![0.0; h * w];
    let mut magnitude = vec![0.0; h * w];
    for ti in 0..j {
        for tj in 0..j {
            let tile = pm.get(ti, tj);
            for y in 0..ny {
                for x in 0..nx {
                    let v = tile[y * nx + x] * scale;
                    let idx = (ti * ny + y) * w + tj * nx + x;
                    angle[idx] = if v.norm() > 0.0 { v.arg() } else { 0.0 };
                    magnitude[idx] = v.norm();
                }
            }
        }
    }
    let roles = vec![Axis::SpaceY, Axis::SpaceX];
    Ok(ModulationMosaic {
        shots: j,
        angle: RealGrid::new(vec![h, w], roles.clone(), angle)?,
        magnitude: RealGrid::new(vec![h, w], roles, magnitude)?,
    })
}

pub fn visualize_kernels(kernels: &MotionKernelSet) -> Result<ModulationMosaic> {
    visualize_modulations(&kernels.to_modulations())
}
