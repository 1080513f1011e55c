use num_complex::Complex64;

use crate::error::{PiddError, Result};
use crate::grid::{Axis, ComplexGrid, Domain};

/// Tolerance on `sum_h |C_h|^2 = 1` inside the support.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// Voxelwise-normalized coil sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSet {
    maps: ComplexGrid,
    support: Vec<bool>,
}

impl CoilSet {
    /// `maps` is `[H, ny, nx]` in the image domain.
    pub fn new(maps: ComplexGrid, support: Vec<bool>) -> Result<Self> {
        Self::with_tolerance(maps, support, NORMALIZATION_TOL)
    }

    fn with_tolerance(maps: ComplexGrid, support: Vec<bool>, tol: f64) -> Result<Self> {
        let (ny, nx) = maps.require_domain(Domain::Image)?;
        if maps.ndim() != 3 || maps.dims()[0] == 0 {
            return Err(PiddError::Dimension(format!(
                "coil maps must be [H, ny, nx] with H >= 1, got {:?}",
                maps.dims()
            )));
        }
        if support.len() != ny * nx {
            return Err(PiddError::ShapeMismatch {
                expected: vec![ny, nx],
                found: vec![support.len()],
            });
        }
        let maps = maps.with_roles(&[Axis::Channel, Axis::SpaceY, Axis::SpaceX])?;
        let set = CoilSet { maps, support };
        for (v, &inside) in set.sum_of_squares().iter().zip(&set.support) {
            if inside && (v - 1.0).abs() > tol {
                return Err(PiddError::InvalidInput(format!(
                    "coil energy {v} inside support is not 1"
                )));
            }
            if !inside && *v != 0.0 {
                return Err(PiddError::InvalidInput(
                    "coil maps are nonzero outside the support".into(),
                ));
            }
        }
        Ok(set)
    }

    /// Rebuild from stored maps, deriving the support from the nonzero
    /// energy. Single precision storage only holds the normalization to
    /// about 1e-6, hence the looser tolerance.
    pub fn from_maps(maps: ComplexGrid) -> Result<Self> {
        let (ny, nx) = maps.spatial()?;
        let h = maps.dims().first().copied().unwrap_or(0);
        let mut support = vec![false; ny * nx];
        for c in 0..h {
            for (s, z) in support.iter_mut().zip(maps.plane(c)) {
                *s |= z.norm_sqr() > 0.0;
            }
        }
        Self::with_tolerance(maps, support, 1e-5)
    }

    pub fn channels(&self) -> usize {
        self.maps.dims()[0]
    }

    pub fn ny(&self) -> usize {
        self.maps.dims()[1]
    }

    pub fn nx(&self) -> usize {
        self.maps.dims()[2]
    }

    pub fn maps(&self) -> &ComplexGrid {
        &self.maps
    }

    pub fn map(&self, h: usize) -> &[Complex64] {
        self.maps.plane(h)
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    pub fn sum_of_squares(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.maps.plane_len()];
        for h in 0..self.channels() {
            for (a, z) in acc.iter_mut().zip(self.map(h)) {
                *a += z.norm_sqr();
            }
        }
        acc
    }
}

/// Multiply an image `[..., y, x]` by every sensitivity, giving
/// `[..., H, y, x]`.
pub fn coil_expand(img: &ComplexGrid, coils: &CoilSet) -> Result<ComplexGrid> {
    let (ny, nx) = img.require_domain(Domain::Image)?;
    if (ny, nx) != (coils.ny(), coils.nx()) {
        return Err(PiddError::ShapeMismatch {
            expected: vec![coils.ny(), coils.nx()],
            found: vec![ny, nx],
        });
    }
    let h = coils.channels();
    let n = img.ndim();
    let mut dims = img.dims()[..n - 2].to_vec();
    dims.extend([h, ny, nx]);
    let mut roles = img.roles()[..n - 2].to_vec();
    roles.extend([Axis::Channel, Axis::SpaceY, Axis::SpaceX]);
    let mut data = Vec::with_capacity(img.len() * h);
    for p in 0..img.planes() {
        let plane = img.plane(p);
        for c in 0..h {
            data.extend(plane.iter().zip(coils.map(c)).map(|(v, s)| v * s));
        }
    }
    ComplexGrid::new(dims, roles, data)
}

/// `sum_h conj(C_h) * img_h` over the channel axis of `[..., H, y, x]`.
pub fn coil_combine(imgs: &ComplexGrid, coils: &CoilSet) -> Result<ComplexGrid> {
    let (ny, nx) = imgs.require_domain(Domain::Image)?;
    let n = imgs.ndim();
    let h = coils.channels();
    if n < 3 || imgs.roles()[n - 3] != Axis::Channel || imgs.dims()[n - 3] != h {
        return Err(PiddError::ShapeMismatch {
            expected: vec![h, coils.ny(), coils.nx()],
            found: imgs.dims().to_vec(),
        });
    }
    if (ny, nx) != (coils.ny(), coils.nx()) {
        return Err(PiddError::ShapeMismatch {
            expected: vec![coils.ny(), coils.nx()],
            found: vec![ny, nx],
        });
    }
    let outer = imgs.planes() / h;
    let mut data = vec![Complex64::default(); outer * ny * nx];
    for (o, out) in data.chunks_exact_mut(ny * nx).enumerate() {
        for c in 0..h {
            for ((acc, v), s) in out.iter_mut().zip(imgs.plane(o * h + c)).zip(coils.map(c)) {
                *acc += s.conj() * v;
            }
        }
    }
    ComplexGrid::new(
        imgs.dims()[..n - 3].iter().copied().chain([ny, nx]).collect(),
        imgs.roles()[..n - 3]
            .iter()
            .copied()
            .chain([Axis::SpaceY, Axis::SpaceX])
            .collect(),
        data,
    )
}
