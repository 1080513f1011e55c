//! PARR binary tensors.
//!
//! Layout, all little endian: `b"PARR"`, `u32` version (1), `u32` dtype
//! (1 = float32, 2 = complex64 as interleaved float32 re/im), `u32` ndim,
//! `ndim` x `u64` dims, then the row-major payload with the last axis
//! fastest.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{PiddError, Result};
use crate::grid::{Axis, ComplexGrid, RealGrid};

pub const MAGIC: &[u8; 4] = b"PARR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Dtype {
    Float32 = 1,
    Complex64 = 2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real { dims: Vec<usize>, data: Vec<f32> },
    Complex { dims: Vec<usize>, data: Vec<[f32; 2]> },
}

impl Tensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            Tensor::Real { dims, .. } | Tensor::Complex { dims, .. } => dims,
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            Tensor::Real { .. } => Dtype::Float32,
            Tensor::Complex { .. } => Dtype::Complex64,
        }
    }

    pub fn from_real(g: &RealGrid) -> Self {
        Tensor::Real {
            dims: g.dims().to_vec(),
            data: g.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_complex(g: &ComplexGrid) -> Self {
        Tensor::Complex {
            dims: g.dims().to_vec(),
            data: g.data().iter().map(|z| [z.re as f32, z.im as f32]).collect(),
        }
    }

    pub fn into_real(self, roles: &[Axis]) -> Result<RealGrid> {
        match self {
            Tensor::Real { dims, data } => {
                RealGrid::new(dims, roles.to_vec(), data.into_iter().map(f64::from).collect())
            }
            Tensor::Complex { .. } => Err(PiddError::Format("expected float32 tensor".into())),
        }
    }

    pub fn into_complex(self, roles: &[Axis]) -> Result<ComplexGrid> {
        match self {
            Tensor::Complex { dims, data } => ComplexGrid::new(
                dims,
                roles.to_vec(),
                data.into_iter()
                    .map(|[re, im]| Complex64::new(re.into(), im.into()))
                    .collect(),
            ),
            Tensor::Real { .. } => Err(PiddError::Format("expected complex64 tensor".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.dims();
        let mut out = Vec::with_capacity(16 + 8 * dims.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dtype() as u32).to_le_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for &d in dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            Tensor::Real { data, .. } => {
                out.reserve(data.len() * 4);
                data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            Tensor::Complex { data, .. } => {
                out.reserve(data.len() * 8);
                for [re, im] in data {
                    out.extend_from_slice(&re.to_le_bytes());
                    out.extend_from_slice(&im.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(PiddError::Format("missing PARR magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(PiddError::Format(format!("unsupported PARR version {version}")));
        }
        let dtype = cur.u32()?;
        let ndim = cur.u32()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(usize::try_from(cur.u64()?).map_err(|_| {
                PiddError::Format("dimension does not fit in usize".into())
            })?);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| PiddError::Format("element count overflows".into()))?;
        let tensor = match dtype {
            1 => {
                let raw = cur.take(n.checked_mul(4).ok_or_else(overflow)?)?;
                Tensor::Real {
                    dims,
                    data: raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                }
            }
            2 => {
                let raw = cur.take(n.checked_mul(8).ok_or_else(overflow)?)?;
                Tensor::Complex {
                    dims,
                    data: raw
                        .chunks_exact(8)
                        .map(|c| {
                            [
                                f32::from_le_bytes(c[..4].try_into().unwrap()),
                                f32::from_le_bytes(c[4..].try_into().unwrap()),
                            ]
                        })
                        .collect(),
                }
            }
            other => return Err(PiddError::Format(format!("unknown PARR dtype {other}"))),
        };
        if cur.pos != bytes.len() {
            return Err(PiddError::Format(format!(
                "{} trailing bytes after payload",
                bytes.len() - cur.pos
            )));
        }
        Ok(tensor)
    }
}

fn overflow() -> PiddError {
    PiddError::Format("payload size overflows".into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PiddError::Format("truncated PARR file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| PiddError::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| PiddError::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

pub fn write_real(path: impl AsRef<Path>, g: &RealGrid) -> Result<()> {
    write(path, &Tensor::from_real(g))
}

pub fn write_complex(path: impl AsRef<Path>, g: &ComplexGrid) -> Result<()> {
    write(path, &Tensor::from_complex(g))
}

pub fn read_real(path: impl AsRef<Path>, roles: &[Axis]) -> Result<RealGrid> {
    read(path)?.into_real(roles)
}

pub fn read_complex(path: impl AsRef<Path>, roles: &[Axis]) -> Result<ComplexGrid> {
    read(path)?.into_complex(roles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::Complex {
            dims: vec![2, 1],
            data: vec![[1.0, -2.0], [0.5, 0.25]],
        };
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"PARR");
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..12], &[2, 0, 0, 0]);
        assert_eq!(&b[12..16], &[2, 0, 0, 0]);
        assert_eq!(&b[16..24], &[2, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[24..32], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[32..36], &1.0f32.to_le_bytes());
        assert_eq!(&b[36..40], &(-2.0f32).to_le_bytes());
        assert_eq!(b.len(), 32 + 16);
    }

    #[test]
    fn rejects_corrupt_input() {
        let good = Tensor::Real {
            dims: vec![3],
            data: vec![1.0, 2.0, 3.0],
        }
        .to_bytes();
        assert!(Tensor::from_bytes(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(Tensor::from_bytes(&extra).is_err());
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(Tensor::from_bytes(&magic).is_err());
        let mut dtype = good;
        dtype[8] = 7;
        assert!(Tensor::from_bytes(&dtype).is_err());
    }

    proptest! {
        #[test]
        fn bytes_round_trip(dims in prop::collection::vec(1usize..4, 0..4), complex: bool, seed: u32) {
            let n: usize = dims.iter().product();
            let vals: Vec<f32> = (0..n).map(|i| (i as f32 + seed as f32) * 0.37 - 1.0).collect();
            let t = if complex {
                Tensor::Complex { dims, data: vals.iter().map(|&v| [v, -v * 2.0]).collect() }
            } else {
                Tensor::Real { dims, data: vals }
            };
            prop_assert_eq!(Tensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }
}
