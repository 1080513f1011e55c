use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::coils::{coil_expand, CoilSet};
use crate::error::{PiddError, Result};
use crate::fft::dft2_centered;
use crate::grid::{Axis, ComplexGrid, Domain, RealGrid};

/// Shot images `P_j * m`, `[J, y, x]`.
pub fn shot_images(magnitude: &RealGrid, phases: &ComplexGrid) -> Result<ComplexGrid> {
    let (ny, nx) = magnitude.require_domain(Domain::Image)?;
    let (py, px) = phases.require_domain(Domain::Image)?;
    if magnitude.ndim() != 2 || phases.ndim() != 3 || (ny, nx) != (py, px) {
        return Err(PiddError::ShapeMismatch {
            expected: vec![ny, nx],
            found: phases.dims().to_vec(),
        });
    }
    if phases.dims()[0] == 0 {
        return Err(PiddError::InvalidConfig("need at least one shot".into()));
    }
    let mut out = phases.clone().with_roles(&[Axis::Shot, Axis::SpaceY, Axis::SpaceX])?;
    for j in 0..out.dims()[0] {
        for (z, &m) in out.plane_mut(j).iter_mut().zip(magnitude.data()) {
            *z *= m;
        }
    }
    Ok(out)
}

/// Multi-shot, multi-channel label k-space `[J, H, ky, kx]` with
/// `X[j, h] = DFT(C_h * P_j * m)`.
pub fn assemble_ground_truth(
    magnitude: &RealGrid,
    phases: &ComplexGrid,
    coils: &CoilSet,
) -> Result<ComplexGrid> {
    let shots = shot_images(magnitude, phases)?;
    dft2_centered(&coil_expand(&shots, coils)?)
}

/// Add circular complex Gaussian noise at `snr_db = 10 log10(|k|^2 / E|n|^2)`.
/// `f64::INFINITY` disables noise.
pub fn add_noise<R: Rng + ?Sized>(k: &ComplexGrid, snr_db: f64, rng: &mut R) -> Result<ComplexGrid> {
    if snr_db == f64::INFINITY {
        return Ok(k.clone());
    }
    if !snr_db.is_finite() {
        return Err(PiddError::InvalidInput(format!("snr {snr_db} dB is not finite")));
    }
    let energy = k.norm_sqr();
    if !(energy > 0.0) {
        return Err(PiddError::InvalidInput("cannot set SNR of a zero-energy signal".into()));
    }
    let variance = energy / (k.len() as f64 * 10f64.powf(snr_db / 10.0));
    let sigma = (variance / 2.0).sqrt();
    let mut out = k.clone();
    for z in out.data_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += Complex64::new(re, im) * sigma;
    }
    Ok(out)
}
