//! Polynomial motion phases.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::{normalized_coord, Axis, ComplexGrid, RealGrid};

/// Half-widths of the uniform coefficient intervals for orders 0..=5.
pub const DEFAULT_HALF_WIDTHS: [f64; 6] = [PI, PI, PI, FRAC_PI_2, FRAC_PI_2, FRAC_PI_2];

/// Coefficients `A[l][m]`, `0 <= m <= l <= order`, of `x^m y^(l-m)`,
/// stored order by order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialPhaseCoeffs {
    order: usize,
    coeffs: Vec<f64>,
}

pub fn coefficient_count(order: usize) -> usize {
    (order + 1) * (order + 2) / 2
}

impl PolynomialPhaseCoeffs {
    pub fn new(order: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != coefficient_count(order) {
            return Err(PiddError::InvalidInput(format!(
                "order {order} needs {} coefficients, got {}",
                coefficient_count(order),
                coeffs.len()
            )));
        }
        Ok(PolynomialPhaseCoeffs { order, coeffs })
    }

    pub fn zeros(order: usize) -> Self {
        PolynomialPhaseCoeffs {
            order,
            coeffs: vec![0.0; coefficient_count(order)],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    fn index(l: usize, m: usize) -> usize {
        l * (l + 1) / 2 + m
    }

    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.coeffs[Self::index(l, m)]
    }

    pub fn set(&mut self, l: usize, m: usize, v: f64) {
        self.coeffs[Self::index(l, m)] = v;
    }

    /// Phase in radians at normalized coordinates.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut phi = 0.0;
        for l in 0..=self.order {
            for m in 0..=l {
                phi += self.get(l, m) * x.powi(m as i32) * y.powi((l - m) as i32);
            }
        }
        phi
    }
}

/// Draw coefficients with the default per-order intervals. Orders above 5
/// have no default interval and must go through [`sample_phase_coeffs_with`].
pub fn sample_phase_coeffs<R: Rng + ?Sized>(order: usize, rng: &mut R) -> Result<PolynomialPhaseCoeffs> {
    sample_phase_coeffs_with(order, &DEFAULT_HALF_WIDTHS, rng)
}

/// Coefficients of order `l` are uniform on `[-half_widths[l], half_widths[l])`.
pub fn sample_phase_coeffs_with<R: Rng + ?Sized>(
    order: usize,
    half_widths: &[f64],
    rng: &mut R,
) -> Result<PolynomialPhaseCoeffs> {
    if order >= half_widths.len() {
        return Err(PiddError::InvalidConfig(format!(
            "phase order {order} has no coefficient range (ranges cover orders 0..={})",
            half_widths.len() as isize - 1
        )));
    }
    let mut c = PolynomialPhaseCoeffs::zeros(order);
    for l in 0..=order {
        let a = half_widths[l];
        if !(a > 0.0) || !a.is_finite() {
            return Err(PiddError::InvalidConfig(format!("invalid half width {a} for order {l}")));
        }
        for m in 0..=l {
            c.set(l, m, rng.random_range(-a..a));
        }
    }
    Ok(c)
}

/// Phase map in radians on an `ny x nx` grid; `x` runs along columns and
/// `y` along rows, both normalized to `[-1, 1]`.
pub fn phase_map(coeffs: &PolynomialPhaseCoeffs, ny: usize, nx: usize) -> Result<RealGrid> {
    if ny < 2 || nx < 2 {
        return Err(PiddError::Dimension(format!("phase grid {ny}x{nx} below 2x2")));
    }
    let mut data = Vec::with_capacity(ny * nx);
    for iy in 0..ny {
        let y = normalized_coord(iy, ny);
        for ix in 0..nx {
            data.push(coeffs.eval(normalized_coord(ix, nx), y));
        }
    }
    RealGrid::new(vec![ny, nx], vec![Axis::SpaceY, Axis::SpaceX], data)
}

pub fn phase_to_complex(phase: &RealGrid) -> ComplexGrid {
    phase.map(|&p| Complex64::from_polar(1.0, p))
}

/// Unit-modulus motion phase `exp(i phi)`.
pub fn synth_motion_phase(coeffs: &PolynomialPhaseCoeffs, ny: usize, nx: usize) -> Result<ComplexGrid> {
    Ok(phase_to_complex(&phase_map(coeffs, ny, nx)?))
}
