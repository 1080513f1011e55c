//! Reconstruction with known motion kernels: phase modulations, data
//! consistency, POCS and structured low-rank completion.

pub mod dc;
pub mod lowrank;
pub mod modulation;
pub mod pocs;

use num_complex::Complex64;

use crate::error::{PiddError, Result};
use crate::fft::fft2c_plane;
use crate::grid::{Axis, ComplexGrid, Domain, RealGrid};
use crate::mask::SamplingMask;

pub use dc::{adjoint_op, data_consistency, data_residual, dc_linear, forward_op, zero_filled};
pub use lowrank::{
    calibrate_rank, complete_entries, coverage_counts, lowrank_reconstruct, lowrank_refine, structured_adjoint,
    structured_matrix, svt_project, svt_project_detailed,
};
pub use modulation::{
    convolve_direct, kernels_from_modulations, phase_modulations, visualize_kernels,
    visualize_modulations, ModulationMosaic, MotionKernelSet, PhaseModulationMatrix,
};
pub use pocs::{pocs_reconstruct, pocs_reconstruct_observed, PocsOutcome, ReconConfig, ReconReport};

/// Final magnitude image of coil-combined multi-shot k-space `[J, ky, kx]`:
/// the mean over shots of `|IDFT(X_j)|`.
pub fn shot_magnitude(x: &ComplexGrid) -> Result<RealGrid> {
    let (ny, nx) = x.require_domain(Domain::Kspace)?;
    if x.ndim() != 3 || x.dims()[0] == 0 {
        return Err(PiddError::Dimension(format!(
            "expected [J, ky, kx], got {:?}",
            x.dims()
        )));
    }
    let j = x.dims()[0];
    let mut out = vec![0.0; ny * nx];
    for s in 0..j {
        let mut img = x.plane(s).to_vec();
        fft2c_plane(&mut img, ny, nx, true);
        for (o, z) in out.iter_mut().zip(&img) {
            *o += z.norm() / j as f64;
        }
    }
    RealGrid::new(vec![ny, nx], vec![Axis::SpaceY, Axis::SpaceX], out)
}

/// Zero-filled baseline image: every shot's measured lines are pooled into
/// one k-space per channel (entries sampled by several shots are averaged),
/// transformed, and combined by root-sum-of-squares.
pub fn zero_filled_image(y: &ComplexGrid, mask: &SamplingMask) -> Result<RealGrid> {
    let (ny, nx) = y.require_domain(Domain::Kspace)?;
    if y.ndim() != 4 {
        return Err(PiddError::Dimension(format!(
            "expected [J, H, ky, kx], got {:?}",
            y.dims()
        )));
    }
    crate::error::check_shape(&[mask.shots(), y.dims()[1], mask.ny(), mask.nx()], y.dims())?;
    let (j, h) = (y.dims()[0], y.dims()[1]);
    let plane = ny * nx;
    let cov = mask.coverage();
    let mut rss = vec![0.0; plane];
    for c in 0..h {
        let mut k = vec![Complex64::default(); plane];
        for s in 0..j {
            for ((acc, v), &w) in k.iter_mut().zip(y.plane(s * h + c)).zip(mask.shot(s)) {
                *acc += v * w;
            }
        }
        for (z, &n) in k.iter_mut().zip(&cov) {
            *z /= n.max(1.0);
        }
        fft2c_plane(&mut k, ny, nx, true);
        for (r, z) in rss.iter_mut().zip(&k) {
            *r += z.norm_sqr();
        }
    }
    RealGrid::new(
        vec![ny, nx],
        vec![Axis::SpaceY, Axis::SpaceX],
        rss.into_iter().map(f64::sqrt).collect(),
    )
}
