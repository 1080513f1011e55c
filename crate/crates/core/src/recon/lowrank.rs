//! Structured (block-Hankel) low-rank operators on coil-combined
//! multi-shot k-space and rank truncation through them.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::coils::CoilSet;
use crate::error::{PiddError, Result};
use crate::grid::{Axis, ComplexGrid, Domain};
use crate::mask::SamplingMask;
use crate::recon::dc::{data_consistency, data_residual, zero_filled};
use crate::recon::pocs::{ReconConfig, ReconReport};

fn check_window(ny: usize, nx: usize, w: usize) -> Result<()> {
    if w == 0 || w % 2 == 0 {
        return Err(PiddError::InvalidConfig(format!("window {w} must be odd")));
    }
    if w > ny.min(nx) {
        return Err(PiddError::InvalidConfig(format!(
            "window {w} exceeds grid {ny}x{nx}"
        )));
    }
    Ok(())
}

fn shots_dims(x: &ComplexGrid) -> Result<(usize, usize, usize)> {
    let (ny, nx) = x.require_domain(Domain::Kspace)?;
    if x.ndim() != 3 {
        return Err(PiddError::Dimension(format!(
            "structured matrix needs [J, ky, kx], got {:?}",
            x.dims()
        )));
    }
    Ok((x.dims()[0], ny, nx))
}

/// One row per valid `w x w` window position, `w^2 J` columns ordered
/// shot-major then row-major within the window.
pub fn structured_matrix(x: &ComplexGrid, w: usize) -> Result<DMatrix<Complex64>> {
    let (j, ny, nx) = shots_dims(x)?;
    check_window(ny, nx, w)?;
    let (py, px) = (ny - w + 1, nx - w + 1);
    let cols = w * w * j;
    Ok(DMatrix::from_fn(py * px, cols, |r, c| {
        let (wy, wx) = (r / px, r % px);
        let (s, off) = (c / (w * w), c % (w * w));
        let (dy, dx) = (off / w, off % w);
        x.plane(s)[(wy + dy) * nx + wx + dx]
    }))
}

/// Scatter-add adjoint of [`structured_matrix`] onto `[shots, ny, nx]`.
pub fn structured_adjoint(
    m: &DMatrix<Complex64>,
    shots: usize,
    ny: usize,
    nx: usize,
    w: usize,
) -> Result<ComplexGrid> {
    check_window(ny, nx, w)?;
    let (py, px) = (ny - w + 1, nx - w + 1);
    if m.nrows() != py * px || m.ncols() != w * w * shots {
        return Err(PiddError::ShapeMismatch {
            expected: vec![py * px, w * w * shots],
            found: vec![m.nrows(), m.ncols()],
        });
    }
    let plane = ny * nx;
    let mut out = vec![Complex64::default(); shots * plane];
    for c in 0..m.ncols() {
        let (s, off) = (c / (w * w), c % (w * w));
        let (dy, dx) = (off / w, off % w);
        let col = m.column(c);
        for r in 0..m.nrows() {
            let (wy, wx) = (r / px, r % px);
            out[s * plane + (wy + dy) * nx + wx + dx] += col[r];
        }
    }
    ComplexGrid::new(
        vec![shots, ny, nx],
        vec![Axis::Shot, Axis::FreqY, Axis::FreqX],
        out,
    )
}

/// Number of windows covering each `(ky, kx)` entry.
pub fn coverage_counts(ny: usize, nx: usize, w: usize) -> Result<Vec<f64>> {
    check_window(ny, nx, w)?;
    let count = |i: usize, n: usize| {
        let lo = i.saturating_sub(w - 1);
        let hi = i.min(n - w);
        (hi + 1 - lo) as f64
    };
    Ok((0..ny * nx).map(|i| count(i / nx, ny) * count(i % nx, nx)).collect())
}

#[derive(Debug, Clone)]
pub struct SvtOutcome {
    pub x: ComplexGrid,
    /// Singular values of the structured matrix of the input, descending.
    pub singular_values: Vec<f64>,
    /// Squared singular values beyond the kept rank.
    pub tail_energy: f64,
}

/// Orthogonal projector onto the dominant `keep`-dimensional right singular
/// subspace of `m`, with the squared singular values in descending order.
///
/// Works on the Hermitian Gram matrix `m^H m` through its real symmetric
/// embedding `[[Re, -Im], [Im, Re]]`, whose eigenvalues come in equal pairs.
fn right_projector(m: &DMatrix<Complex64>, keep: usize) -> Result<(DMatrix<Complex64>, Vec<f64>)> {
    let n = m.ncols();
    let g = m.adjoint() * m;
    let embed = DMatrix::<f64>::from_fn(2 * n, 2 * n, |r, c| {
        let z = g[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let eig = nalgebra::SymmetricEigen::try_new(embed, f64::EPSILON, 0)
        .ok_or_else(|| PiddError::Numerical("eigendecomposition did not converge".into()))?;
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let power: Vec<f64> = order.iter().step_by(2).map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let mut proj = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for &k in &order[..2 * keep] {
        let v = eig.eigenvectors.column(k);
        proj += v * v.transpose();
    }
    let pi = DMatrix::<Complex64>::from_fn(n, n, |r, c| {
        Complex64::new(
            0.5 * (proj[(r, c)] + proj[(r + n, c + n)]),
            0.5 * (proj[(r + n, c)] - proj[(r, c + n)]),
        )
    });
    Ok((pi, power))
}

/// Keep the `rank` largest singular values of the structured matrix of `x`
/// and average the result back onto the grid.
pub fn svt_project_detailed(x: &ComplexGrid, rank: usize, w: usize) -> Result<SvtOutcome> {
    let (j, ny, nx) = shots_dims(x)?;
    let m = structured_matrix(x, w)?;
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(PiddError::Numerical("non-finite entries in structured matrix".into()));
    }
    let keep = rank.min(m.ncols());
    let (pi, power) = right_projector(&m, keep)?;
    let low = if keep == m.ncols() {
        m
    } else {
        &m * pi
    };
    let tail_energy = power[keep..].iter().sum();
    let mut out = structured_adjoint(&low, j, ny, nx, w)?;
    let cov = coverage_counts(ny, nx, w)?;
    for s in 0..j {
        for (z, c) in out.plane_mut(s).iter_mut().zip(&cov) {
            *z /= c;
        }
    }
    Ok(SvtOutcome {
        x: out.with_roles(x.roles())?,
        singular_values: power.iter().map(|p| p.sqrt()).collect(),
        tail_energy,
    })
}

pub fn svt_project(x: &ComplexGrid, cfg: &ReconConfig) -> Result<ComplexGrid> {
    let j = shots_dims(x)?.0;
    Ok(svt_project_detailed(x, cfg.rank_for(j), cfg.window)?.x)
}

/// Smallest rank whose leading singular values hold at least `fraction` of
/// the structured-matrix energy, maximized over `examples`.
pub fn calibrate_rank(examples: &[ComplexGrid], w: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(PiddError::InvalidConfig(format!("energy fraction {fraction} outside (0, 1]")));
    }
    let mut best = 0;
    for x in examples {
        let (j, _, _) = shots_dims(x)?;
        let sv = svt_project_detailed(x, j * w * w, w)?.singular_values;
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let mut acc = 0.0;
        let rank = sv
            .iter()
            .position(|s| {
                acc += s * s;
                acc >= fraction * total
            })
            .map_or(sv.len(), |p| p + 1);
        best = best.max(rank);
    }
    Ok(best)
}

/// Alternate rank truncation with resetting the `known` entries to their
/// values in `observed`.
pub fn complete_entries(
    observed: &ComplexGrid,
    known: &[bool],
    rank: usize,
    w: usize,
    passes: usize,
) -> Result<ComplexGrid> {
    if known.len() != observed.len() {
        return Err(PiddError::ShapeMismatch {
            expected: observed.dims().to_vec(),
            found: vec![known.len()],
        });
    }
    let mut x = observed.clone();
    for (z, &k) in x.data_mut().iter_mut().zip(known) {
        if !k {
            *z = Complex64::default();
        }
    }
    for _ in 0..passes {
        x = svt_project_detailed(&x, rank, w)?.x;
        for ((z, o), &k) in x.data_mut().iter_mut().zip(observed.data()).zip(known) {
            if k {
                *z = *o;
            }
        }
    }
    Ok(x)
}

/// `cfg.pf_repeats` rounds of rank truncation, each followed by data
/// consistency with the measurements.
pub fn lowrank_refine(
    x: &ComplexGrid,
    y: &ComplexGrid,
    coils: &CoilSet,
    mask: &SamplingMask,
    cfg: &ReconConfig,
) -> Result<ComplexGrid> {
    cfg.validate()?;
    let mut x = x.clone();
    for _ in 0..cfg.pf_repeats {
        x = svt_project(&x, cfg)?;
        x = data_consistency(&x, y, coils, mask, cfg.lambda)?;
    }
    Ok(x)
}

/// Calibrationless reconstruction: `cfg.iters` rounds of data consistency
/// and rank truncation from the zero-filled start, ending on consistency.
pub fn lowrank_reconstruct(
    y: &ComplexGrid,
    coils: &CoilSet,
    mask: &SamplingMask,
    cfg: &ReconConfig,
) -> Result<(ComplexGrid, ReconReport)> {
    cfg.validate()?;
    let mut x = zero_filled(y, coils, mask)?;
    let mut flags = Vec::new();
    let mut done = 0;
    for _ in 0..cfg.iters {
        let z = data_consistency(&x, y, coils, mask, cfg.lambda)?;
        match svt_project(&z, cfg) {
            Ok(next) => x = next,
            Err(PiddError::Numerical(msg)) => {
                flags.push(format!("svd_failed: {msg}"));
                x = z;
                break;
            }
            Err(e) => return Err(e),
        }
        done += 1;
    }
    let x = data_consistency(&x, y, coils, mask, cfg.lambda)?;
    let final_residual = data_residual(&x, y, coils, mask)?;
    Ok((
        x,
        ReconReport {
            method: "lowrank".into(),
            iters: done,
            final_residual,
            flags,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const K3: [Axis; 3] = [Axis::Shot, Axis::FreqY, Axis::FreqX];

    fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> ComplexGrid {
        let n = dims.iter().product();
        ComplexGrid::new(
            dims.to_vec(),
            K3.to_vec(),
            (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap()
    }

    /// Sum of `rank` 2-D complex exponentials with per-shot amplitudes; its
    /// structured matrix has rank `rank`.
    fn exponential_sum(j: usize, n: usize, rank: usize, rng: &mut ChaCha8Rng) -> ComplexGrid {
        let freqs: Vec<(f64, f64)> = (0..rank)
            .map(|_| (rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
            .collect();
        let amps: Vec<Complex64> = (0..j * rank)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let mut x = ComplexGrid::zeros(&[j, n, n], &K3).unwrap();
        for s in 0..j {
            for (i, z) in x.plane_mut(s).iter_mut().enumerate() {
                let (ky, kx) = ((i / n) as f64, (i % n) as f64);
                for (r, &(fy, fx)) in freqs.iter().enumerate() {
                    *z += amps[s * rank + r] * Complex64::from_polar(1.0, 2.0 * PI * (fy * ky + fx * kx));
                }
            }
        }
        x
    }

    #[test]
    fn adjoint_inner_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random(&[2, 8, 8], &mut rng);
        let m = structured_matrix(&x, 3).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (36, 18));
        let other = DMatrix::from_fn(36, 18, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let lhs: Complex64 = m.iter().zip(other.iter()).map(|(a, b)| a.conj() * b).sum();
        let rhs = x.inner(&structured_adjoint(&other, 2, 8, 8, 3).unwrap()).unwrap();
        assert!((lhs - rhs).norm() < 1e-10);
    }

    #[test]
    fn adjoint_of_gather_is_weighted_scatter() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 7, 9], &mut rng);
        let back = structured_adjoint(&structured_matrix(&x, 3).unwrap(), 2, 7, 9, 3).unwrap();
        let cov = coverage_counts(7, 9, 3).unwrap();
        for s in 0..2 {
            for ((b, v), c) in back.plane(s).iter().zip(x.plane(s)).zip(&cov) {
                assert!((b / c - v).norm() < 1e-12);
            }
        }
        assert_eq!(cov[0], 1.0);
        assert_eq!(cov[4 * 9 + 4], 9.0);
    }

    #[test]
    fn constant_single_shot_is_rank_one() {
        let mut x = ComplexGrid::zeros(&[1, 8, 8], &K3).unwrap();
        x.data_mut().iter_mut().for_each(|z| *z = Complex64::new(0.3, -1.2));
        let sv = svt_project_detailed(&x, 1, 3).unwrap();
        assert!(sv.tail_energy < 1e-12 * x.norm_sqr());
        assert!(sv.x.sub(&x).unwrap().norm() < 1e-10 * x.norm());
    }

    #[test]
    fn truncation_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[2, 8, 8], &mut rng);
        let all = svt_project_detailed(&x, 18, 3).unwrap();
        assert!(all.x.sub(&x).unwrap().norm() < 1e-10 * x.norm());
        let none = svt_project_detailed(&x, 0, 3).unwrap();
        assert!(none.x.norm() == 0.0);
    }

    #[test]
    fn exact_rank_input_is_fixed_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = exponential_sum(2, 12, 3, &mut rng);
        let once = svt_project_detailed(&x, 3, 5).unwrap();
        assert!(once.tail_energy < 1e-12 * once.singular_values[0].powi(2));
        assert!(once.x.sub(&x).unwrap().norm() < 1e-10 * x.norm());
        let twice = svt_project_detailed(&once.x, 3, 5).unwrap();
        assert!(twice.x.sub(&once.x).unwrap().norm() < 1e-8 * x.norm());
    }

    #[test]
    fn repeated_truncation_has_nonincreasing_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut x = random(&[2, 10, 10], &mut rng);
        let mut tails = Vec::new();
        for _ in 0..15 {
            let out = svt_project_detailed(&x, 2, 3).unwrap();
            tails.push(out.tail_energy);
            x = out.x;
        }
        for w in tails.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10), "{tails:?}");
        }
        assert!(tails[14] < tails[0]);
    }

    #[test]
    fn calibrated_rank_of_exact_rank_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = exponential_sum(2, 12, 3, &mut rng);
        assert_eq!(calibrate_rank(&[x.clone()], 5, 0.999999).unwrap(), 3);
        assert_eq!(calibrate_rank(&[x.clone()], 5, 1e-9).unwrap(), 1);
        assert!(calibrate_rank(&[x], 5, 0.0).is_err());
    }

    #[test]
    fn window_errors() {
        let x = ComplexGrid::zeros(&[1, 4, 4], &K3).unwrap();
        assert!(structured_matrix(&x, 5).is_err());
        assert!(structured_matrix(&x, 2).is_err());
        let mut bad = x.clone();
        bad.data_mut()[0] = Complex64::new(f64::NAN, 0.0);
        assert!(matches!(svt_project_detailed(&bad, 1, 3), Err(PiddError::Numerical(_))));
    }
}
