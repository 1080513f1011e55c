//! Acquisition operator `A = U F C` on coil-combined multi-shot k-space and
//! the data-consistency step built from it.

use num_complex::Complex64;

use crate::coils::CoilSet;
use crate::error::{check_shape, PiddError, Result};
use crate::fft::fft2c_plane;
use crate::grid::{Axis, ComplexGrid, Domain};
use crate::mask::SamplingMask;

fn check_operands(x: &ComplexGrid, coils: &CoilSet, mask: &SamplingMask) -> Result<(usize, usize, usize)> {
    let (ny, nx) = x.require_domain(Domain::Kspace)?;
    if x.ndim() != 3 {
        return Err(PiddError::Dimension(format!(
            "coil-combined k-space must be [J, ky, kx], got {:?}",
            x.dims()
        )));
    }
    let j = x.dims()[0];
    check_shape(&[mask.shots(), mask.ny(), mask.nx()], x.dims())?;
    check_shape(&[coils.ny(), coils.nx()], &[ny, nx])?;
    Ok((j, ny, nx))
}

/// `A X`: `[J, ky, kx] -> [J, H, ky, kx]`, masked.
pub fn forward_op(x: &ComplexGrid, coils: &CoilSet, mask: &SamplingMask) -> Result<ComplexGrid> {
    let (j, ny, nx) = check_operands(x, coils, mask)?;
    let h = coils.channels();
    let plane = ny * nx;
    let mut out = Vec::with_capacity(j * h * plane);
    for s in 0..j {
        let mut img = x.plane(s).to_vec();
        fft2c_plane(&mut img, ny, nx, true);
        let m = mask.shot(s);
        for c in 0..h {
            let mut k: Vec<Complex64> = img.iter().zip(coils.map(c)).map(|(v, s)| v * s).collect();
            fft2c_plane(&mut k, ny, nx, false);
            for (z, &w) in k.iter_mut().zip(m) {
                *z *= w;
            }
            out.extend(k);
        }
    }
    ComplexGrid::new(
        vec![j, h, ny, nx],
        vec![Axis::Shot, Axis::Channel, Axis::FreqY, Axis::FreqX],
        out,
    )
}

/// `A* Y`: `[J, H, ky, kx] -> [J, ky, kx]`.
pub fn adjoint_op(y: &ComplexGrid, coils: &CoilSet, mask: &SamplingMask) -> Result<ComplexGrid> {
    let (ny, nx) = y.require_domain(Domain::Kspace)?;
    let h = coils.channels();
    if y.ndim() != 4 || y.dims()[1] != h {
        return Err(PiddError::ShapeMismatch {
            expected: vec![mask.shots(), h, mask.ny(), mask.nx()],
            found: y.dims().to_vec(),
        });
    }
    let j = y.dims()[0];
    check_shape(&[mask.shots(), h, mask.ny(), mask.nx()], y.dims())?;
    let plane = ny * nx;
    let mut out = vec![Complex64::default(); j * plane];
    for s in 0..j {
        let acc = &mut out[s * plane..(s + 1) * plane];
        let m = mask.shot(s);
        for c in 0..h {
            let mut k: Vec<Complex64> = y.plane(s * h + c).iter().zip(m).map(|(v, &w)| v * w).collect();
            fft2c_plane(&mut k, ny, nx, true);
            for ((a, v), cs) in acc.iter_mut().zip(&k).zip(coils.map(c)) {
                *a += cs.conj() * v;
            }
        }
        fft2c_plane(acc, ny, nx, false);
    }
    ComplexGrid::new(
        vec![j, ny, nx],
        vec![Axis::Shot, Axis::FreqY, Axis::FreqX],
        out,
    )
}

/// One shot of `X + lambda A*(Y - A X)`; `y` holds that shot's `H` channel
/// planes, or `None` for a zero measurement.
fn dc_shot(
    x: &[Complex64],
    y: Option<&[Complex64]>,
    coils: &CoilSet,
    mask: &[f64],
    lambda: f64,
    ny: usize,
    nx: usize,
) -> Vec<Complex64> {
    let plane = ny * nx;
    let mut img = x.to_vec();
    fft2c_plane(&mut img, ny, nx, true);
    let mut acc = vec![Complex64::default(); plane];
    for c in 0..coils.channels() {
        let cmap = coils.map(c);
        let coil_img: Vec<Complex64> = img.iter().zip(cmap).map(|(v, s)| v * s).collect();
        let mut r = coil_img.clone();
        fft2c_plane(&mut r, ny, nx, false);
        for (i, z) in r.iter_mut().enumerate() {
            let meas = y.map_or(Complex64::default(), |y| y[c * plane + i]);
            *z = (meas - *z) * mask[i];
        }
        fft2c_plane(&mut r, ny, nx, true);
        for (((a, ci), ri), s) in acc.iter_mut().zip(&coil_img).zip(&r).zip(cmap) {
            *a += s.conj() * (ci + ri * lambda);
        }
    }
    fft2c_plane(&mut acc, ny, nx, false);
    acc
}

fn dc_impl(
    x: &ComplexGrid,
    y: Option<&ComplexGrid>,
    coils: &CoilSet,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<ComplexGrid> {
    let (j, ny, nx) = check_operands(x, coils, mask)?;
    let h = coils.channels();
    if let Some(y) = y {
        check_shape(&[j, h, ny, nx], y.dims())?;
    }
    let plane = ny * nx;
    let mut out = Vec::with_capacity(j * plane);
    for s in 0..j {
        let ys = y.map(|y| &y.data()[s * h * plane..(s + 1) * h * plane]);
        out.extend(dc_shot(x.plane(s), ys, coils, mask.shot(s), lambda, ny, nx));
    }
    ComplexGrid::new(x.dims().to_vec(), x.roles().to_vec(), out)
}

/// Data-consistency step `F sum_h conj(C_h) (C_h x + lambda F^-1 U (Y_h - U F C_h x))`
/// with `x = F^-1 X`. Content outside the coil support is dropped, so for
/// `lambda = 0` this is the support projection of `X`.
pub fn data_consistency(
    x: &ComplexGrid,
    y: &ComplexGrid,
    coils: &CoilSet,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<ComplexGrid> {
    dc_impl(x, Some(y), coils, mask, lambda)
}

/// Linear part `F C* (I - lambda F^-1 U F) C F^-1` of the data-consistency
/// step. It is Hermitian, so it also propagates gradients backwards.
pub fn dc_linear(g: &ComplexGrid, coils: &CoilSet, mask: &SamplingMask, lambda: f64) -> Result<ComplexGrid> {
    dc_impl(g, None, coils, mask, lambda)
}

/// Zero-filled, coil-combined adjoint `A* Y` used to initialize iterations.
pub fn zero_filled(y: &ComplexGrid, coils: &CoilSet, mask: &SamplingMask) -> Result<ComplexGrid> {
    adjoint_op(y, coils, mask)
}

/// `||A X - Y|| / ||Y||`.
pub fn data_residual(x: &ComplexGrid, y: &ComplexGrid, coils: &CoilSet, mask: &SamplingMask) -> Result<f64> {
    let ax = forward_op(x, coils, mask)?;
    let yn = crate::mask::apply_mask(y, mask)?;
    let den = yn.norm();
    let num = ax.sub(&yn)?.norm();
    Ok(if den > 0.0 { num / den } else { num })
}
