//! Analytic coil sensitivity model: Gaussian lobes around a ring of coil
//! centres with linear phase ramps, normalized voxelwise.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coils::CoilSet;
use crate::error::{PiddError, Result};
use crate::grid::{normalized_coord, Axis, ComplexGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoilModel {
    /// Angular offset of the first coil centre, radians.
    pub rotation: f64,
    /// Distance of the coil centres from the grid centre (normalized units).
    pub ring_radius: f64,
    /// Gaussian lobe width (normalized units).
    pub width: f64,
    /// Phase ramp slope along each coil's axis, radians per normalized unit.
    pub phase_slope: f64,
}

impl Default for CoilModel {
    fn default() -> Self {
        CoilModel {
            rotation: 0.0,
            ring_radius: 1.1,
            width: 0.8,
            phase_slope: 0.6,
        }
    }
}

pub fn make_coils(h: usize, ny: usize, nx: usize, support: &[bool]) -> Result<CoilSet> {
    make_coils_with(h, ny, nx, support, &CoilModel::default())
}

/// Sensitivities normalized so `sum_h |C_h|^2 = 1` on `support` (zero
/// elsewhere), with the phase of coil 0 removed so a single coil is
/// identically 1.
pub fn make_coils_with(
    h: usize,
    ny: usize,
    nx: usize,
    support: &[bool],
    model: &CoilModel,
) -> Result<CoilSet> {
    if h == 0 {
        return Err(PiddError::InvalidConfig("coil count must be >= 1".into()));
    }
    if support.len() != ny * nx {
        return Err(PiddError::ShapeMismatch {
            expected: vec![ny, nx],
            found: vec![support.len()],
        });
    }
    if !(model.width > 0.0) {
        return Err(PiddError::InvalidConfig("coil lobe width must be positive".into()));
    }
    let plane = ny * nx;
    let mut data = vec![Complex64::default(); h * plane];
    for c in 0..h {
        let theta = model.rotation + 2.0 * PI * c as f64 / h as f64;
        let (sy, sx) = theta.sin_cos();
        let (py, px) = (model.ring_radius * sy, model.ring_radius * sx);
        for iy in 0..ny {
            let y = normalized_coord(iy, ny);
            for ix in 0..nx {
                let x = normalized_coord(ix, nx);
                let d2 = (y - py).powi(2) + (x - px).powi(2);
                let mag = (-d2 / (2.0 * model.width * model.width)).exp();
                let phase = model.phase_slope * (x * sx + y * sy) + theta;
                data[c * plane + iy * nx + ix] = Complex64::from_polar(mag, phase);
            }
        }
    }
    for v in 0..plane {
        if !support[v] {
            for c in 0..h {
                data[c * plane + v] = Complex64::default();
            }
            continue;
        }
        let energy: f64 = (0..h).map(|c| data[c * plane + v].norm_sqr()).sum::<f64>().sqrt();
        let reference = data[v];
        let rot = if reference.norm() > 0.0 {
            reference.conj() / reference.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        for c in 0..h {
            data[c * plane + v] = data[c * plane + v] * rot / energy;
        }
    }
    let maps = ComplexGrid::new(
        vec![h, ny, nx],
        vec![Axis::Channel, Axis::SpaceY, Axis::SpaceX],
        data,
    )?;
    CoilSet::new(maps, support.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::phantom::{make_phantom, PhantomSpec};

    #[test]
    fn single_coil_is_one_on_support() {
        let p = make_phantom(32, 32, &PhantomSpec::default()).unwrap();
        let c = make_coils(1, 32, 32, &p.support).unwrap();
        for (z, &s) in c.map(0).iter().zip(&p.support) {
            let expected = if s { 1.0 } else { 0.0 };
            assert!((z - Complex64::new(expected, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn normalized_for_any_count() {
        let p = make_phantom(32, 32, &PhantomSpec::default()).unwrap();
        for h in [2, 3, 8, 12] {
            let c = make_coils(h, 32, 32, &p.support).unwrap();
            for (e, &s) in c.sum_of_squares().iter().zip(&p.support) {
                if s {
                    assert!((e - 1.0).abs() < 1e-6);
                } else {
                    assert_eq!(*e, 0.0);
                }
            }
        }
    }

    #[test]
    fn profiles_are_smooth() {
        let n = 64;
        let p = make_phantom(n, n, &PhantomSpec::default()).unwrap();
        let c = make_coils(8, n, n, &p.support).unwrap();
        let mut worst: f64 = 0.0;
        for h in 0..8 {
            let m = c.map(h);
            for y in 0..n {
                for x in 0..n {
                    let v = y * n + x;
                    if !p.support[v] {
                        continue;
                    }
                    for w in [v + 1, v + n] {
                        if w < n * n && p.support[w] && (w != v + 1 || x + 1 < n) {
                            worst = worst.max((m[v].norm() - m[w].norm()).abs());
                        }
                    }
                }
            }
        }
        assert!(worst < 0.15, "max neighbour step {worst}");
    }

    #[test]
    fn zero_coils_rejected() {
        assert!(make_coils(0, 16, 16, &[true; 256]).is_err());
    }
}
