//! 16-bit binary PGM (P5) export with a JSON sidecar holding the scaling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::RealGrid;
use crate::synth::dataset::{read_json, write_json};

pub const PGM_MAX: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    Magnitude,
    Phase,
}

/// Value range mapped linearly onto `0..=65535`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgmScale {
    pub kind: ImageKind,
    pub min: f64,
    pub max: f64,
    pub width: usize,
    pub height: usize,
}

impl PgmScale {
    pub fn quantize(&self, v: f64) -> u16 {
        if self.max <= self.min {
            return 0;
        }
        let t = ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0);
        (t * PGM_MAX as f64).round() as u16
    }

    pub fn dequantize(&self, q: u16) -> f64 {
        self.min + (self.max - self.min) * q as f64 / PGM_MAX as f64
    }
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    let mut s = pgm.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write a 2-D image. Magnitudes use their own min/max; phases use
/// `[-pi, pi]`.
pub fn export_image(image: &RealGrid, kind: ImageKind, path: &Path) -> Result<PgmScale> {
    if image.ndim() != 2 {
        return Err(PiddError::Dimension(format!(
            "PGM export needs a 2-D image, got dims {:?}",
            image.dims()
        )));
    }
    let (height, width) = (image.dims()[0], image.dims()[1]);
    let (min, max) = match kind {
        ImageKind::Phase => (-std::f64::consts::PI, std::f64::consts::PI),
        ImageKind::Magnitude => image
            .data()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
    };
    if !min.is_finite() || !max.is_finite() {
        return Err(PiddError::Numerical("image contains non-finite values".into()));
    }
    let scale = PgmScale {
        kind,
        min,
        max,
        width,
        height,
    };
    let mut bytes = format!("P5\n{width} {height}\n{PGM_MAX}\n").into_bytes();
    for &v in image.data() {
        bytes.extend_from_slice(&scale.quantize(v).to_be_bytes());
    }
    fs::write(path, bytes).map_err(|e| PiddError::io(path, e))?;
    write_json(&sidecar_path(path), &scale)?;
    Ok(scale)
}

/// Raw samples and dimensions of a 16-bit P5 file.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let bytes = fs::read(path).map_err(|e| PiddError::io(path, e))?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(PiddError::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| s.parse::<usize>().map_err(|_| PiddError::Format(format!("bad PGM header field {s:?}")));
    if fields[0] != "P5" {
        return Err(PiddError::Format(format!("not a binary PGM: {}", fields[0])));
    }
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != PGM_MAX as usize {
        return Err(PiddError::Format(format!("expected 16-bit PGM, maxval {maxval}")));
    }
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() != 2 * w * h {
        return Err(PiddError::Format(format!(
            "PGM body has {} bytes, expected {}",
            body.len(),
            2 * w * h
        )));
    }
    Ok((w, h, body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()))
}

/// Values reconstructed from a PGM and its sidecar.
pub fn import_image(path: &Path) -> Result<(PgmScale, Vec<f64>)> {
    let scale: PgmScale = read_json(&sidecar_path(path))?;
    let (w, h, raw) = read_pgm(path)?;
    if (w, h) != (scale.width, scale.height) {
        return Err(PiddError::Format("PGM size does not match its sidecar".into()));
    }
    let values = raw.into_iter().map(|q| scale.dequantize(q)).collect();
    Ok((scale, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Axis;

    fn image(data: Vec<f64>, h: usize, w: usize) -> RealGrid {
        RealGrid::new(vec![h, w], vec![Axis::SpaceY, Axis::SpaceX], data).unwrap()
    }

    #[test]
    fn constant_image_is_constant() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.pgm");
        let scale = export_image(&image(vec![2.5; 12], 3, 4), ImageKind::Magnitude, &p).unwrap();
        assert_eq!((scale.min, scale.max), (2.5, 2.5));
        let (w, h, raw) = read_pgm(&p).unwrap();
        assert_eq!((w, h), (4, 3));
        assert!(raw.iter().all(|&q| q == raw[0]));
        let (_, back) = import_image(&p).unwrap();
        assert!(back.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn round_trip_within_one_quantization_step() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.pgm");
        let data: Vec<f64> = (0..35).map(|i| (i as f64 * 0.7).sin() * 3.0 + 1.0).collect();
        let scale = export_image(&image(data.clone(), 5, 7), ImageKind::Magnitude, &p).unwrap();
        let (_, back) = import_image(&p).unwrap();
        let step = (scale.max - scale.min) / PGM_MAX as f64;
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() <= step);
        }
    }

    #[test]
    fn phase_uses_fixed_range_and_rejects_3d() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.pgm");
        let scale = export_image(&image(vec![0.0, 1.0], 1, 2), ImageKind::Phase, &p).unwrap();
        assert_eq!(scale.min, -std::f64::consts::PI);
        let (_, _, raw) = read_pgm(&p).unwrap();
        assert_eq!(raw[0], 32768);
        let cube = RealGrid::new(vec![1, 1, 2], vec![Axis::Shot, Axis::SpaceY, Axis::SpaceX], vec![0.0; 2]).unwrap();
        assert!(matches!(export_image(&cube, ImageKind::Magnitude, &p), Err(PiddError::Dimension(_))));
    }
}
