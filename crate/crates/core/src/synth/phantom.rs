//! Ellipse phantoms carrying a non-diffusion image and a diffusion tensor
//! per voxel.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::{normalized_coord, Axis, RealGrid};
use crate::parr;

/// Unique entries of a symmetric 3x3 tensor: `[xx, yy, zz, xy, xz, yz]`.
pub type SymTensor = [f64; 6];

/// Isotropic diffusivity of the background compartment, mm^2/s.
pub const BACKGROUND_DIFFUSIVITY: f64 = 0.8e-3;

pub fn tensor_matrix(d: &SymTensor) -> Matrix3<f64> {
    Matrix3::new(d[0], d[3], d[4], d[3], d[1], d[5], d[4], d[5], d[2])
}

pub fn isotropic(d: f64) -> SymTensor {
    [d, d, d, 0.0, 0.0, 0.0]
}

/// Eigenvalues in descending order.
pub fn eigenvalues(d: &SymTensor) -> [f64; 3] {
    let e = SymmetricEigen::new(tensor_matrix(d)).eigenvalues;
    let mut v = [e[0], e[1], e[2]];
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Tensor with the given eigenvalues, principal axis along `principal`
/// (need not be normalized), the remaining two axes completing an
/// orthonormal frame.
pub fn tensor_from_eigen(eigs: [f64; 3], principal: [f64; 3]) -> Result<SymTensor> {
    if eigs.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(PiddError::InvalidInput(format!(
            "eigenvalues {eigs:?} must be finite and nonnegative"
        )));
    }
    let e1 = Vector3::from(principal);
    let n = e1.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(PiddError::InvalidInput("principal direction is zero".into()));
    }
    let e1 = e1 / n;
    let helper = if e1.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e2 = (helper - e1 * e1.dot(&helper)).normalize();
    let e3 = e1.cross(&e2);
    let m = e1 * e1.transpose() * eigs[0] + e2 * e2.transpose() * eigs[1] + e3 * e3.transpose() * eigs[2];
    Ok([m[(0, 0)], m[(1, 1)], m[(2, 2)], m[(0, 1)], m[(0, 2)], m[(1, 2)]])
}

/// Ellipse in normalized `[-1, 1]^2` coordinates; `angle` rotates the
/// `ry` axis away from the y direction (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub ry: f64,
    pub rx: f64,
    pub angle: f64,
}

impl Ellipse {
    fn validate(&self) -> Result<()> {
        let finite = [self.cy, self.cx, self.ry, self.rx, self.angle]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.ry <= 0.0 || self.rx <= 0.0 {
            return Err(PiddError::InvalidConfig(format!("degenerate ellipse {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = c * dy + s * dx;
        let v = -s * dy + c * dx;
        (u / self.ry).powi(2) + (v / self.rx).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub ellipse: Ellipse,
    pub m0: f64,
    /// Eigenvalues in mm^2/s, principal first.
    pub eigenvalues: [f64; 3],
    pub principal: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub background: Ellipse,
    pub background_m0: f64,
    /// Painted in order; later regions overwrite earlier ones.
    pub regions: Vec<Region>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            background: Ellipse {
                cy: 0.0,
                cx: 0.0,
                ry: 0.85,
                rx: 0.7,
                angle: 0.0,
            },
            background_m0: 0.6,
            regions: vec![
                Region {
                    ellipse: Ellipse {
                        cy: -0.35,
                        cx: -0.2,
                        ry: 0.25,
                        rx: 0.14,
                        angle: 0.5,
                    },
                    m0: 0.9,
                    eigenvalues: [1.7e-3, 0.2e-3, 0.2e-3],
                    principal: [1.0, 0.0, 0.0],
                },
                Region {
                    ellipse: Ellipse {
                        cy: 0.3,
                        cx: 0.2,
                        ry: 0.2,
                        rx: 0.28,
                        angle: -0.3,
                    },
                    m0: 0.4,
                    eigenvalues: [1.4e-3, 0.4e-3, 0.3e-3],
                    principal: [0.0, 0.0, 1.0],
                },
                Region {
                    ellipse: Ellipse {
                        cy: 0.05,
                        cx: -0.3,
                        ry: 0.15,
                        rx: 0.12,
                        angle: 0.0,
                    },
                    m0: 1.0,
                    eigenvalues: [1.2e-3, 0.5e-3, 0.5e-3],
                    principal: [0.0, 1.0, 0.0],
                },
                Region {
                    ellipse: Ellipse {
                        cy: 0.5,
                        cx: -0.25,
                        ry: 0.1,
                        rx: 0.1,
                        angle: 0.0,
                    },
                    m0: 0.3,
                    eigenvalues: [1.5e-3, 0.3e-3, 0.6e-3],
                    principal: [1.0, 1.0, 1.0],
                },
            ],
        }
    }
}

impl PhantomSpec {
    /// Default layout with jittered geometry, contrast and fibre
    /// orientation.
    pub fn randomized<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut spec = PhantomSpec::default();
        spec.background.ry = rng.random_range(0.72..0.9);
        spec.background.rx = rng.random_range(0.58..0.78);
        spec.background.angle = rng.random_range(-0.2..0.2);
        spec.background_m0 = rng.random_range(0.4..0.8);
        for r in &mut spec.regions {
            r.ellipse.cy += rng.random_range(-0.1..0.1);
            r.ellipse.cx += rng.random_range(-0.1..0.1);
            r.ellipse.ry *= rng.random_range(0.8..1.2);
            r.ellipse.rx *= rng.random_range(0.8..1.2);
            r.ellipse.angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            r.m0 = rng.random_range(0.3..1.0);
            r.eigenvalues = [
                rng.random_range(1.0e-3..1.7e-3),
                rng.random_range(0.2e-3..0.6e-3),
                rng.random_range(0.2e-3..0.6e-3),
            ];
            r.principal = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.05..1.0),
            ];
        }
        spec
    }

    fn validate(&self) -> Result<()> {
        self.background.validate()?;
        if !(self.background_m0 >= 0.0) {
            return Err(PiddError::InvalidConfig("negative background m0".into()));
        }
        for r in &self.regions {
            r.ellipse.validate()?;
            if !(r.m0 >= 0.0) {
                return Err(PiddError::InvalidConfig(format!("negative m0 in {r:?}")));
            }
        }
        Ok(())
    }
}

/// Non-diffusion image, per-voxel tensors and object support.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorPhantom {
    pub m0: RealGrid,
    pub tensors: Vec<SymTensor>,
    pub support: Vec<bool>,
}

impl TensorPhantom {
    pub fn new(m0: RealGrid, tensors: Vec<SymTensor>, support: Vec<bool>) -> Result<Self> {
        let (ny, nx) = m0.spatial()?;
        if m0.ndim() != 2 || tensors.len() != ny * nx || support.len() != ny * nx {
            return Err(PiddError::Dimension(
                "phantom m0, tensors and support must share one (y, x) grid".into(),
            ));
        }
        for ((&m, d), &s) in m0.data().iter().zip(&tensors).zip(&support) {
            if !(m >= 0.0) || (!s && m != 0.0) {
                return Err(PiddError::InvalidInput(format!(
                    "m0 value {m} violates nonnegativity or support"
                )));
            }
            if eigenvalues(d)[2] < -1e-12 {
                return Err(PiddError::InvalidInput(format!(
                    "diffusion tensor {d:?} is not positive semidefinite"
                )));
            }
        }
        Ok(TensorPhantom {
            m0,
            tensors,
            support,
        })
    }

    pub fn ny(&self) -> usize {
        self.m0.dims()[0]
    }

    pub fn nx(&self) -> usize {
        self.m0.dims()[1]
    }

    /// Load a `[7, ny, nx]` float32 PARR volume: m0 followed by
    /// `xx, yy, zz, xy, xz, yz` tensor entries. Support is `m0 > 0`.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let g = parr::read_real(path, &[Axis::Channel, Axis::SpaceY, Axis::SpaceX])?;
        if g.dims()[0] != 7 {
            return Err(PiddError::Dimension(format!(
                "phantom volume must be [7, ny, nx], got {:?}",
                g.dims()
            )));
        }
        let (ny, nx) = (g.dims()[1], g.dims()[2]);
        let m0 = RealGrid::new(
            vec![ny, nx],
            vec![Axis::SpaceY, Axis::SpaceX],
            g.plane(0).to_vec(),
        )?;
        let support = m0.data().iter().map(|&v| v > 0.0).collect();
        let tensors = (0..ny * nx)
            .map(|v| {
                let mut d = [0.0; 6];
                for (c, e) in d.iter_mut().enumerate() {
                    *e = g.plane(c + 1)[v];
                }
                d
            })
            .collect();
        TensorPhantom::new(m0, tensors, support)
    }
}

pub fn make_phantom(ny: usize, nx: usize, spec: &PhantomSpec) -> Result<TensorPhantom> {
    if ny < 16 || nx < 16 {
        return Err(PiddError::InvalidConfig(format!(
            "phantom grid {ny}x{nx} is smaller than 16x16"
        )));
    }
    spec.validate()?;
    let region_tensors = spec
        .regions
        .iter()
        .map(|r| tensor_from_eigen(r.eigenvalues, r.principal))
        .collect::<Result<Vec<_>>>()?;
    let mut m0 = vec![0.0; ny * nx];
    let mut tensors = vec![[0.0; 6]; ny * nx];
    let mut support = vec![false; ny * nx];
    for iy in 0..ny {
        let y = normalized_coord(iy, ny);
        for ix in 0..nx {
            let x = normalized_coord(ix, nx);
            if !spec.background.contains(y, x) {
                continue;
            }
            let v = iy * nx + ix;
            support[v] = true;
            m0[v] = spec.background_m0;
            tensors[v] = isotropic(BACKGROUND_DIFFUSIVITY);
            for (r, d) in spec.regions.iter().zip(&region_tensors) {
                if r.ellipse.contains(y, x) {
                    m0[v] = r.m0;
                    tensors[v] = *d;
                }
            }
        }
    }
    let m0 = RealGrid::new(vec![ny, nx], vec![Axis::SpaceY, Axis::SpaceX], m0)?;
    TensorPhantom::new(m0, tensors, support)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fa(e: [f64; 3]) -> f64 {
        let mean = (e[0] + e[1] + e[2]) / 3.0;
        let num: f64 = e.iter().map(|l| (l - mean).powi(2)).sum();
        let den: f64 = e.iter().map(|l| l * l).sum();
        (1.5 * num / den).sqrt()
    }

    #[test]
    fn default_phantom_is_valid_and_psd() {
        let p = make_phantom(64, 64, &PhantomSpec::default()).unwrap();
        assert!(p.tensors.iter().all(|d| eigenvalues(d)[2] >= -1e-12));
        let inside = p.support.iter().filter(|&&s| s).count();
        assert!(inside > 64 * 64 / 3 && inside < 64 * 64 * 2 / 3);
        for (&m, &s) in p.m0.data().iter().zip(&p.support) {
            if s {
                assert!((0.3..=1.0).contains(&m));
            } else {
                assert_eq!(m, 0.0);
            }
        }
    }

    #[test]
    fn region_eigenvalues_and_fa() {
        let d = tensor_from_eigen([1.7e-3, 0.2e-3, 0.2e-3], [1.0, 2.0, -0.5]).unwrap();
        let e = eigenvalues(&d);
        assert!((e[0] - 1.7e-3).abs() < 1e-15);
        assert!((e[2] - 0.2e-3).abs() < 1e-15);
        // (1.7, 0.2, 0.2): mean 0.7, sum sq dev 1.5, sum sq 2.97
        let expected = (1.5f64 * 1.5 / 2.97).sqrt();
        assert!((fa(e) - expected).abs() < 1e-9);
        assert!((fa(e) - 0.8705).abs() < 1e-3);
        assert!(fa(eigenvalues(&isotropic(BACKGROUND_DIFFUSIVITY))) < 1e-12);
    }

    #[test]
    fn randomized_specs_stay_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let spec = PhantomSpec::randomized(&mut rng);
            let p = make_phantom(32, 32, &spec).unwrap();
            assert!(p.support.iter().any(|&s| s));
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let mut spec = PhantomSpec::default();
        spec.regions[0].ellipse.rx = 0.0;
        assert!(make_phantom(32, 32, &spec).is_err());
        assert!(make_phantom(8, 32, &PhantomSpec::default()).is_err());
        assert!(tensor_from_eigen([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn load_round_trip() {
        let p = make_phantom(16, 16, &PhantomSpec::default()).unwrap();
        let mut vol = p.m0.data().to_vec();
        for c in 0..6 {
            vol.extend(p.tensors.iter().map(|d| d[c]));
        }
        let g = RealGrid::new(vec![7, 16, 16], vec![Axis::Channel, Axis::SpaceY, Axis::SpaceX], vol)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phantom.parr");
        parr::write_real(&path, &g).unwrap();
        let loaded = TensorPhantom::load(&path).unwrap();
        assert_eq!(loaded.support, p.support);
        for (a, b) in loaded.m0.data().iter().zip(p.m0.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
