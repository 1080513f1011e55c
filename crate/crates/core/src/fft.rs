//! Centered, unitary two dimensional DFT.
//!
//! Index `i` of an `n`-point axis carries position or frequency `i - n/2`
//! (integer division), so DC sits at `(ny/2, nx/2)`. Both directions are
//! scaled by `1/sqrt(n)` per axis and form an exact unitary pair for any
//! length.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::Result;
use crate::grid::{Axis, ComplexGrid, Domain};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(n, direction))
}

fn centered_1d(
    fft: &dyn Fft<f64>,
    buf: &mut [Complex64],
    scratch: &mut [Complex64],
    line: &mut [Complex64],
) {
    let n = buf.len();
    let c = n / 2;
    for q in 0..n {
        line[q] = buf[(q + c) % n];
    }
    fft.process_with_scratch(line, scratch);
    let s = 1.0 / (n as f64).sqrt();
    for (k, b) in buf.iter_mut().enumerate() {
        *b = line[(k + n - c) % n] * s;
    }
}

/// In-place centered unitary transform of one row-major `ny x nx` plane.
pub fn fft2c_plane(data: &mut [Complex64], ny: usize, nx: usize, inverse: bool) {
    debug_assert_eq!(data.len(), ny * nx);
    let dir = if inverse {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let fx = plan(nx, dir);
    let fy = plan(ny, dir);
    let scratch_len = fx
        .get_inplace_scratch_len()
        .max(fy.get_inplace_scratch_len());
    let mut scratch = vec![Complex64::default(); scratch_len];
    let mut line = vec![Complex64::default(); nx.max(ny)];
    for row in data.chunks_exact_mut(nx) {
        centered_1d(fx.as_ref(), row, &mut scratch, &mut line[..nx]);
    }
    let mut col = vec![Complex64::default(); ny];
    for x in 0..nx {
        for y in 0..ny {
            col[y] = data[y * nx + x];
        }
        centered_1d(fy.as_ref(), &mut col, &mut scratch, &mut line[..ny]);
        for y in 0..ny {
            data[y * nx + x] = col[y];
        }
    }
}

/// Transform every trailing plane of `data` (length a multiple of `ny*nx`).
pub fn fft2c_planes(data: &mut [Complex64], ny: usize, nx: usize, inverse: bool) {
    for plane in data.chunks_exact_mut(ny * nx) {
        fft2c_plane(plane, ny, nx, inverse);
    }
}

fn transform(input: &ComplexGrid, from: Domain, to: Domain) -> Result<ComplexGrid> {
    let (ny, nx) = input.require_domain(from)?;
    let mut roles: Vec<Axis> = input.roles().to_vec();
    let n = roles.len();
    roles[n - 2..].copy_from_slice(&to.axes());
    let mut out = input.clone().with_roles(&roles)?;
    fft2c_planes(out.data_mut(), ny, nx, from == Domain::Kspace);
    Ok(out)
}

/// Image (`space_y`, `space_x`) to k-space (`freq_y`, `freq_x`), batched
/// over leading axes.
pub fn dft2_centered(img: &ComplexGrid) -> Result<ComplexGrid> {
    transform(img, Domain::Image, Domain::Kspace)
}

/// Inverse of [`dft2_centered`].
pub fn idft2_centered(k: &ComplexGrid) -> Result<ComplexGrid> {
    transform(k, Domain::Kspace, Domain::Image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_image(ny: usize, nx: usize, seed: u64) -> ComplexGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..ny * nx)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexGrid::new(vec![ny, nx], vec![Axis::SpaceY, Axis::SpaceX], data).unwrap()
    }

    /// Direct O(N^2) centered DFT used as an independent reference.
    fn brute_dft(img: &ComplexGrid) -> Vec<Complex64> {
        let (ny, nx) = img.spatial().unwrap();
        let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
        let s = 1.0 / ((ny * nx) as f64).sqrt();
        let mut out = vec![Complex64::default(); ny * nx];
        for ky in 0..ny {
            for kx in 0..nx {
                let mut acc = Complex64::default();
                for y in 0..ny {
                    for x in 0..nx {
                        let ph = -2.0
                            * PI
                            * ((ky as f64 - cy) * (y as f64 - cy) / ny as f64
                                + (kx as f64 - cx) * (x as f64 - cx) / nx as f64);
                        acc += img.data()[y * nx + x] * Complex64::from_polar(1.0, ph);
                    }
                }
                out[ky * nx + kx] = acc * s;
            }
        }
        out
    }

    #[test]
    fn matches_brute_force_on_odd_and_even_sizes() {
        for &(ny, nx) in &[(4, 6), (5, 7), (8, 3)] {
            let img = random_image(ny, nx, 3);
            let k = dft2_centered(&img).unwrap();
            let reference = brute_dft(&img);
            for (a, b) in k.data().iter().zip(&reference) {
                assert!((a - b).norm() < 1e-12, "{ny}x{nx}");
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for &n in &[2usize, 7, 16, 33, 64, 256] {
            let img = random_image(n, n, n as u64);
            let k = dft2_centered(&img).unwrap();
            assert!((k.norm() - img.norm()).abs() <= 1e-12 * img.norm());
            let back = idft2_centered(&k).unwrap();
            let err = back.sub(&img.clone().with_roles(back.roles()).unwrap()).unwrap();
            assert!(err.norm() <= 1e-12 * img.norm(), "n = {n}");
        }
    }

    #[test]
    fn constant_image_concentrates_at_center() {
        let (ny, nx) = (6, 10);
        let c = Complex64::new(0.7, -0.2);
        let img =
            ComplexGrid::new(vec![ny, nx], vec![Axis::SpaceY, Axis::SpaceX], vec![c; ny * nx])
                .unwrap();
        let k = dft2_centered(&img).unwrap();
        let center = (ny / 2) * nx + nx / 2;
        for (i, v) in k.data().iter().enumerate() {
            if i == center {
                assert!((v - c * ((ny * nx) as f64).sqrt()).norm() < 1e-12);
            } else {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn batched_over_leading_axes() {
        let a = random_image(8, 8, 1);
        let b = random_image(8, 8, 2);
        let stacked = ComplexGrid::stack(vec![a.clone(), b.clone()], Axis::Shot).unwrap();
        let k = dft2_centered(&stacked).unwrap();
        assert_eq!(k.roles(), &[Axis::Shot, Axis::FreqY, Axis::FreqX]);
        assert_eq!(k.slice_first(1).unwrap(), dft2_centered(&b).unwrap());
    }

    #[test]
    fn rejects_non_spatial_input() {
        let g = ComplexGrid::zeros(&[4, 4], &[Axis::Shot, Axis::Channel]).unwrap();
        assert!(dft2_centered(&g).is_err());
        let k = ComplexGrid::zeros(&[4, 4], &[Axis::FreqY, Axis::FreqX]).unwrap();
        assert!(dft2_centered(&k).is_err());
    }
}
