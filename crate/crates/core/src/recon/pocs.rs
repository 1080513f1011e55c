//! Alternating data consistency and kernel interpolation with known
//! (oracle) or supplied motion kernels.

use serde::{Deserialize, Serialize};

use crate::coils::CoilSet;
use crate::error::{PiddError, Result};
use crate::grid::ComplexGrid;
use crate::mask::SamplingMask;
use crate::recon::dc::{data_consistency, data_residual, zero_filled};
use crate::recon::modulation::MotionKernelSet;

/// Consecutive increases of the relative iterate change that stop the solver.
pub const DIVERGENCE_PATIENCE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconConfig {
    pub lambda: f64,
    pub iters: usize,
    /// Kept singular values; `None` uses the shot count.
    pub svt_rank: Option<usize>,
    pub window: usize,
    pub pf_repeats: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            lambda: 1.0,
            iters: 50,
            svt_rank: None,
            window: 5,
            pf_repeats: 10,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(PiddError::InvalidConfig(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(PiddError::InvalidConfig(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        Ok(())
    }

    pub fn rank_for(&self, shots: usize) -> usize {
        self.svt_rank.unwrap_or(shots)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconReport {
    pub method: String,
    pub iters: usize,
    pub final_residual: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PocsOutcome {
    pub x: ComplexGrid,
    /// Relative iterate change per completed iteration.
    pub changes: Vec<f64>,
    pub diverged: bool,
    pub report: ReconReport,
}

/// Tracks relative iterate changes and reports a run of increases.
#[derive(Debug, Default)]
pub(crate) struct DivergenceGuard {
    last: Option<f64>,
    rising: usize,
}

impl DivergenceGuard {
    pub(crate) fn observe(&mut self, change: f64) -> bool {
        if !change.is_finite() {
            return true;
        }
        // changes at round-off level are noise, not growth
        let rising = matches!(self.last, Some(prev) if change > prev * (1.0 + 1e-9) && change > 1e-12);
        self.rising = if rising { self.rising + 1 } else { 0 };
        self.last = Some(change);
        self.rising >= DIVERGENCE_PATIENCE
    }
}

pub(crate) fn relative_change(new: &ComplexGrid, old: &ComplexGrid) -> f64 {
    let diff: f64 = new
        .data()
        .iter()
        .zip(old.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let base = old.norm();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

pub fn pocs_reconstruct(
    y: &ComplexGrid,
    coils: &CoilSet,
    mask: &SamplingMask,
    kernels: &MotionKernelSet,
    cfg: &ReconConfig,
) -> Result<PocsOutcome> {
    pocs_reconstruct_observed(y, coils, mask, kernels, cfg, |_, _| {})
}

/// As [`pocs_reconstruct`], calling `observer(t, X)` after each iteration
/// `t = 1..=iters` with the interpolated iterate.
pub fn pocs_reconstruct_observed<F: FnMut(usize, &ComplexGrid)>(
    y: &ComplexGrid,
    coils: &CoilSet,
    mask: &SamplingMask,
    kernels: &MotionKernelSet,
    cfg: &ReconConfig,
    mut observer: F,
) -> Result<PocsOutcome> {
    cfg.validate()?;
    if kernels.shots() < 2 {
        return Err(PiddError::InvalidConfig(
            "kernel interpolation needs at least two shots".into(),
        ));
    }
    let mut x = zero_filled(y, coils, mask)?;
    let mut guard = DivergenceGuard::default();
    let mut changes = Vec::with_capacity(cfg.iters);
    let mut diverged = false;
    for t in 1..=cfg.iters {
        let z = data_consistency(&x, y, coils, mask, cfg.lambda)?;
        let next = kernels.apply(&z)?;
        let change = relative_change(&next, &x);
        changes.push(change);
        x = next;
        observer(t, &x);
        if guard.observe(change) {
            diverged = true;
            break;
        }
    }
    let x = data_consistency(&x, y, coils, mask, cfg.lambda)?;
    let mut flags = Vec::new();
    if diverged {
        flags.push("diverged".to_string());
    }
    let final_residual = data_residual(&x, y, coils, mask)?;
    Ok(PocsOutcome {
        report: ReconReport {
            method: "pocs".into(),
            iters: changes.len(),
            final_residual,
            flags,
        },
        x,
        changes,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::dc::forward_op;
    use crate::recon::modulation::{kernels_from_modulations, phase_modulations};
    use crate::recon::shot_magnitude;
    use crate::synth::{generate_sample, SynthesisSpec};

    fn spec(shots: usize, n: usize) -> SynthesisSpec {
        SynthesisSpec {
            ny: n,
            nx: n,
            shots,
            coils: 4,
            snr_db: None,
            ..SynthesisSpec::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(ReconConfig::default().validate().is_ok());
        for bad in [
            ReconConfig { lambda: 0.0, ..Default::default() },
            ReconConfig { window: 4, ..Default::default() },
            ReconConfig { window: 1, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(PiddError::InvalidConfig(_))));
        }
        assert_eq!(ReconConfig::default().rank_for(4), 4);
    }

    #[test]
    fn truth_is_a_fixed_point_with_full_sampling() {
        let s = generate_sample(&spec(3, 32), 7, 0).unwrap();
        let full = SamplingMask::full(3, 32, 32).unwrap();
        let kernels = kernels_from_modulations(&phase_modulations(&s.phases).unwrap());
        let truth = s.combined_label().unwrap();
        let y = forward_op(&truth, &s.coils, &full).unwrap();
        let z = data_consistency(&truth, &y, &s.coils, &full, 1.0).unwrap();
        let next = kernels.apply(&z).unwrap();
        assert!(next.sub(&truth).unwrap().norm() < 1e-10 * truth.norm());
    }

    #[test]
    fn interleaved_error_is_monotone() {
        let s = generate_sample(&spec(2, 32), 3, 1).unwrap();
        let kernels = kernels_from_modulations(&phase_modulations(&s.phases).unwrap());
        let truth = s.combined_label().unwrap();
        let cfg = ReconConfig { iters: 30, ..Default::default() };
        let mut errors = Vec::new();
        let out = pocs_reconstruct_observed(&s.input, &s.coils, &s.mask, &kernels, &cfg, |_, x| {
            errors.push(x.sub(&truth).unwrap().norm());
        })
        .unwrap();
        for w in errors.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * truth.norm(), "{} > {}", w[1], w[0]);
        }
        assert!(!out.diverged);
        let m = s.reference_image().unwrap();
        let got = shot_magnitude(&out.x).unwrap();
        let zf = shot_magnitude(&zero_filled(&s.input, &s.coils, &s.mask).unwrap()).unwrap();
        let err = |a: &crate::grid::RealGrid| {
            a.data().iter().zip(m.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() / m.norm()
        };
        assert!(err(&got) < err(&zf));
    }

    #[test]
    fn zero_kernels_give_zero_filled_consistency() {
        let s = generate_sample(&spec(2, 16), 1, 0).unwrap();
        let kernels = MotionKernelSet::zeros(2, 16, 16);
        let cfg = ReconConfig { iters: 3, ..Default::default() };
        let out = pocs_reconstruct(&s.input, &s.coils, &s.mask, &kernels, &cfg).unwrap();
        let zf = zero_filled(&s.input, &s.coils, &s.mask).unwrap();
        assert!(out.x.sub(&zf).unwrap().norm() < 1e-12 * zf.norm());
    }

    #[test]
    fn single_shot_is_rejected() {
        let s = generate_sample(&spec(1, 16), 1, 0).unwrap();
        let kernels = MotionKernelSet::zeros(1, 16, 16);
        let err = pocs_reconstruct(&s.input, &s.coils, &s.mask, &kernels, &ReconConfig::default());
        assert!(matches!(err, Err(PiddError::InvalidConfig(_))));
    }

    #[test]
    fn guard_trips_on_sustained_growth() {
        let mut g = DivergenceGuard::default();
        let trips: Vec<bool> = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0].iter().map(|&c| g.observe(c)).collect();
        assert_eq!(trips, vec![false, false, false, false, false, true]);
        let mut g = DivergenceGuard::default();
        assert!(![1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 4.0].iter().any(|&c| g.observe(c)));
        assert!(DivergenceGuard::default().observe(f64::NAN));
    }
}
