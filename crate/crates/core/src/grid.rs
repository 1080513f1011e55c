//! N-dimensional grids with tagged axes.
//!
//! Storage is row-major with the last axis fastest. Every two dimensional
//! operation in the crate acts on the trailing `(y, x)` pair and treats the
//! leading axes (shot, channel) as a batch.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Shot,
    Channel,
    FreqY,
    FreqX,
    SpaceY,
    SpaceX,
}

impl Axis {
    pub fn is_y(self) -> bool {
        matches!(self, Axis::FreqY | Axis::SpaceY)
    }

    pub fn is_x(self) -> bool {
        matches!(self, Axis::FreqX | Axis::SpaceX)
    }

    pub fn is_spatial(self) -> bool {
        self.is_x() || self.is_y()
    }
}

/// Spatial domain of the trailing axis pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Image,
    Kspace,
}

impl Domain {
    pub fn axes(self) -> [Axis; 2] {
        match self {
            Domain::Image => [Axis::SpaceY, Axis::SpaceX],
            Domain::Kspace => [Axis::FreqY, Axis::FreqX],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    dims: Vec<usize>,
    roles: Vec<Axis>,
    data: Vec<T>,
}

pub type ComplexGrid = Grid<Complex64>;
pub type RealGrid = Grid<f64>;

impl<T: Clone + Default> Grid<T> {
    pub fn zeros(dims: &[usize], roles: &[Axis]) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims.to_vec(), roles.to_vec(), vec![T::default(); n])
    }

    pub fn zeros_like<U>(other: &Grid<U>) -> Self {
        Grid {
            dims: other.dims.clone(),
            roles: other.roles.clone(),
            data: vec![T::default(); other.data.len()],
        }
    }
}

impl<T> Grid<T> {
    pub fn new(dims: Vec<usize>, roles: Vec<Axis>, data: Vec<T>) -> Result<Self> {
        if dims.len() != roles.len() {
            return Err(PiddError::Dimension(format!(
                "{} dims but {} axis roles",
                dims.len(),
                roles.len()
            )));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(PiddError::Dimension(format!(
                "dims {dims:?} hold {n} values but {} were given",
                data.len()
            )));
        }
        let ys = roles.iter().filter(|r| r.is_y()).count();
        let xs = roles.iter().filter(|r| r.is_x()).count();
        if ys > 1 || xs > 1 {
            return Err(PiddError::Dimension(format!(
                "axis roles {roles:?} contain more than one y or x axis"
            )));
        }
        Ok(Grid { dims, roles, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn roles(&self) -> &[Axis] {
        &self.roles
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Retag the axes without touching the data.
    pub fn with_roles(mut self, roles: &[Axis]) -> Result<Self> {
        if roles.len() != self.dims.len() {
            return Err(PiddError::Dimension(format!(
                "cannot tag {}-d grid with {} roles",
                self.dims.len(),
                roles.len()
            )));
        }
        self.roles = roles.to_vec();
        Ok(self)
    }

    /// `(ny, nx)` of the trailing spatial pair, checking the pair is present
    /// and consists of a y-like axis followed by an x-like axis.
    pub fn spatial(&self) -> Result<(usize, usize)> {
        let n = self.dims.len();
        if n < 2 || !self.roles[n - 2].is_y() || !self.roles[n - 1].is_x() {
            return Err(PiddError::Dimension(format!(
                "expected trailing (y, x) axes, found roles {:?}",
                self.roles
            )));
        }
        Ok((self.dims[n - 2], self.dims[n - 1]))
    }

    /// Domain of the trailing pair, if it is a consistent spatial pair.
    pub fn domain(&self) -> Result<Domain> {
        self.spatial()?;
        let n = self.roles.len();
        match (self.roles[n - 2], self.roles[n - 1]) {
            (Axis::SpaceY, Axis::SpaceX) => Ok(Domain::Image),
            (Axis::FreqY, Axis::FreqX) => Ok(Domain::Kspace),
            (a, b) => Err(PiddError::Dimension(format!(
                "mixed spatial axes {a:?}/{b:?}"
            ))),
        }
    }

    pub fn require_domain(&self, domain: Domain) -> Result<(usize, usize)> {
        let found = self.domain()?;
        if found != domain {
            return Err(PiddError::Dimension(format!(
                "expected {domain:?} axes, found {found:?}"
            )));
        }
        self.spatial()
    }

    /// Number of `(y, x)` planes stacked along the leading axes.
    pub fn planes(&self) -> usize {
        let n = self.dims.len();
        if n < 2 {
            return 0;
        }
        self.dims[..n - 2].iter().product()
    }

    pub fn plane_len(&self) -> usize {
        let n = self.dims.len();
        if n < 2 {
            return self.data.len();
        }
        self.dims[n - 2] * self.dims[n - 1]
    }

    pub fn plane(&self, i: usize) -> &[T] {
        let len = self.plane_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn plane_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.plane_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn map<U, F: FnMut(&T) -> U>(&self, f: F) -> Grid<U> {
        Grid {
            dims: self.dims.clone(),
            roles: self.roles.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Sub-grid obtained by fixing the first axis at `index`.
    pub fn slice_first(&self, index: usize) -> Result<Grid<T>>
    where
        T: Clone,
    {
        if self.dims.len() < 2 || index >= self.dims[0] {
            return Err(PiddError::Dimension(format!(
                "cannot take slice {index} of dims {:?}",
                self.dims
            )));
        }
        let stride: usize = self.dims[1..].iter().product();
        Ok(Grid {
            dims: self.dims[1..].to_vec(),
            roles: self.roles[1..].to_vec(),
            data: self.data[index * stride..(index + 1) * stride].to_vec(),
        })
    }

    /// Stack equally shaped grids along a new leading axis.
    pub fn stack(parts: Vec<Grid<T>>, role: Axis) -> Result<Grid<T>> {
        let first = parts
            .first()
            .ok_or_else(|| PiddError::Dimension("cannot stack zero grids".into()))?;
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(&first.dims);
        let mut roles = vec![role];
        roles.extend_from_slice(&first.roles);
        let inner = first.dims.clone();
        let mut data = Vec::with_capacity(first.data.len() * parts.len());
        for p in parts {
            crate::error::check_shape(&inner, &p.dims)?;
            data.extend(p.data);
        }
        Grid::new(dims, roles, data)
    }
}

impl ComplexGrid {
    pub fn from_real(real: &RealGrid) -> ComplexGrid {
        real.map(|&v| Complex64::new(v, 0.0))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexGrid) -> Result<Complex64> {
        crate::error::check_shape(&self.dims, &other.dims)?;
        Ok(inner(&self.data, &other.data))
    }

    pub fn abs(&self) -> RealGrid {
        self.map(|z| z.norm())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: Complex64, other: &ComplexGrid) -> Result<()> {
        crate::error::check_shape(&self.dims, &other.dims)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(s, o)| *s += a * o);
        Ok(())
    }

    pub fn sub(&self, other: &ComplexGrid) -> Result<ComplexGrid> {
        crate::error::check_shape(&self.dims, &other.dims)?;
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(s, o)| *s -= o);
        Ok(out)
    }
}

impl RealGrid {
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Normalized coordinate of sample `i` on an `n`-point grid spanning [-1, 1].
pub fn normalized_coord(i: usize, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    -1.0 + 2.0 * i as f64 / (n - 1) as f64
}
