//! Effective shot-to-shot modulations of a trained network, read off its
//! k-space response to a centered impulse.

use num_complex::Complex64;

use crate::error::{PiddError, Result};
use crate::fft::fft2c_plane;
use crate::learned::network::{net_forward, WeightSet};
use crate::recon::modulation::{phase_modulations, visualize_modulations, ModulationMosaic, PhaseModulationMatrix};
use crate::synth::dataset::MultiShotSample;

/// Amplitude of the probing impulse in normalized network units.
pub const PROBE_AMPLITUDE: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct ModulationProbe {
    pub learned: PhaseModulationMatrix,
    pub mosaic: ModulationMosaic,
    /// Mean absolute angle between learned and oracle off-diagonal
    /// modulations over the sample support, in radians.
    pub angular_deviation: f64,
}

/// `M_ij = (J-1) sqrt(N) IDFT(r_ij)` where `r_ij` is shot `i` of
/// `(N(a d_j) - N(0)) / a` for a real impulse `d_j` at the k-space center of
/// shot `j`. Uses the first block's network.
pub fn learned_modulations(weights: &WeightSet, ny: usize, nx: usize) -> Result<PhaseModulationMatrix> {
    let j = weights.shots;
    if j < 2 {
        return Err(PiddError::InvalidConfig("modulations need at least two shots".into()));
    }
    let layers = weights.block(0);
    let plane = ny * nx;
    let center = (ny / 2) * nx + nx / 2;
    let base = net_forward(layers, vec![0.0; 2 * j * plane], ny, nx).output;
    let factor = (j - 1) as f64 * (plane as f64).sqrt() / PROBE_AMPLITUDE;
    let mut maps = vec![Complex64::default(); j * j * plane];
    for src in 0..j {
        let mut input = vec![0.0; 2 * j * plane];
        input[2 * src * plane + center] = PROBE_AMPLITUDE;
        let out = net_forward(layers, input, ny, nx).output;
        for dst in 0..j {
            let mut resp: Vec<Complex64> = (0..plane)
                .map(|p| {
                    let re = out[2 * dst * plane + p] - base[2 * dst * plane + p];
                    let im = out[(2 * dst + 1) * plane + p] - base[(2 * dst + 1) * plane + p];
                    Complex64::new(re, im) * factor
                })
                .collect();
            fft2c_plane(&mut resp, ny, nx, true);
            let off = (dst * j + src) * plane;
            maps[off..off + plane].copy_from_slice(&resp);
        }
    }
    PhaseModulationMatrix::from_maps(j, ny, nx, maps)
}

pub fn extract_learned_modulations(weights: &WeightSet, sample: &MultiShotSample) -> Result<ModulationProbe> {
    let (ny, nx) = (sample.phases.dims()[1], sample.phases.dims()[2]);
    if sample.shots() != weights.shots {
        return Err(PiddError::ShapeMismatch {
            expected: vec![weights.shots],
            found: vec![sample.shots()],
        });
    }
    let learned = learned_modulations(weights, ny, nx)?;
    let oracle = phase_modulations(&sample.phases)?;
    let support = sample.support();
    let (mut acc, mut count) = (0.0, 0usize);
    for i in 0..weights.shots {
        for j in (0..weights.shots).filter(|&j| j != i) {
            for ((l, o), _) in learned.get(i, j).iter().zip(oracle.get(i, j)).zip(support).filter(|(_, &s)| s) {
                if l.norm() > 0.0 {
                    acc += (l * o.conj()).arg().abs();
                    count += 1;
                }
            }
        }
    }
    let mosaic = visualize_modulations(&learned)?;
    Ok(ModulationProbe {
        learned,
        mosaic,
        angular_deviation: if count > 0 { acc / count as f64 } else { std::f64::consts::PI },
    })
}
