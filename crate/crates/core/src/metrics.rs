//! Image quality metrics, realized SNR and a log-linear diffusion tensor fit.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::{ComplexGrid, RealGrid};
use crate::synth::diffusion::DiffusionProtocol;
use crate::synth::phantom::{eigenvalues, SymTensor};

/// Reported PSNR when the reconstruction matches the reference exactly.
pub const PSNR_CAP_DB: f64 = 300.0;

fn check_same(a: &RealGrid, b: &RealGrid) -> Result<()> {
    crate::error::check_shape(a.dims(), b.dims())
}

/// Ghost-to-signal ratio: mean magnitude outside the support over mean
/// magnitude inside it.
pub fn gsr(image: &RealGrid, support: &[bool]) -> Result<f64> {
    if support.len() != image.len() {
        return Err(PiddError::ShapeMismatch {
            expected: image.dims().to_vec(),
            found: vec![support.len()],
        });
    }
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for (v, &s) in image.data().iter().zip(support) {
        if s {
            inside += v.abs();
            n_in += 1;
        } else {
            outside += v.abs();
            n_out += 1;
        }
    }
    if n_in == 0 {
        return Err(PiddError::InvalidInput("support mask is empty".into()));
    }
    if n_out == 0 {
        return Err(PiddError::InvalidInput("support covers the whole image".into()));
    }
    let signal = inside / n_in as f64;
    if !(signal > 0.0) {
        return Err(PiddError::InvalidInput("no signal inside the support".into()));
    }
    Ok(outside / n_out as f64 / signal)
}

/// `20 log10(max|ref| / rmse)` on magnitudes, capped at [`PSNR_CAP_DB`].
pub fn psnr(recon: &RealGrid, reference: &RealGrid) -> Result<f64> {
    check_same(recon, reference)?;
    let peak = reference.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak > 0.0) {
        return Err(PiddError::InvalidInput("reference image is zero".into()));
    }
    let mse = recon
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a.abs() - b.abs()).powi(2))
        .sum::<f64>()
        / recon.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB))
}

pub fn is_capped(psnr_db: f64) -> bool {
    psnr_db >= PSNR_CAP_DB
}

/// `10 log10(|clean|^2 / |noisy - clean|^2)`.
pub fn realized_snr(clean: &ComplexGrid, noisy: &ComplexGrid) -> Result<f64> {
    let noise = noisy.sub(clean)?.norm_sqr();
    if noise == 0.0 {
        return Err(PiddError::InvalidInput("inputs are identical".into()));
    }
    Ok(10.0 * (clean.norm_sqr() / noise).log10())
}

/// Row of the log-linear design: `-b g^T D g` in terms of the unique entries.
fn design_row(p: &DiffusionProtocol) -> [f64; 6] {
    let [x, y, z] = p.g();
    let b = p.b();
    [
        -b * x * x,
        -b * y * y,
        -b * z * z,
        -2.0 * b * x * y,
        -2.0 * b * x * z,
        -2.0 * b * y * z,
    ]
}

/// Per-voxel tensor from magnitudes acquired under `protocols`; images with
/// `b = 0` give the reference `m0` (averaged in the log domain if several).
/// Voxels outside `support` (when given) or with non-positive magnitudes get
/// a zero tensor.
pub fn fit_diffusion_tensor(
    magnitudes: &[RealGrid],
    protocols: &[DiffusionProtocol],
    support: Option<&[bool]>,
) -> Result<Vec<SymTensor>> {
    if magnitudes.len() != protocols.len() || magnitudes.is_empty() {
        return Err(PiddError::InvalidInput(format!(
            "{} images for {} protocols",
            magnitudes.len(),
            protocols.len()
        )));
    }
    let n = magnitudes[0].len();
    for m in magnitudes {
        check_same(m, &magnitudes[0])?;
    }
    if let Some(s) = support {
        if s.len() != n {
            return Err(PiddError::ShapeMismatch {
                expected: magnitudes[0].dims().to_vec(),
                found: vec![s.len()],
            });
        }
    }
    let zero: Vec<usize> = (0..protocols.len()).filter(|&i| protocols[i].b() == 0.0).collect();
    let weighted: Vec<usize> = (0..protocols.len()).filter(|&i| protocols[i].b() > 0.0).collect();
    if zero.is_empty() {
        return Err(PiddError::InvalidInput("tensor fit needs a b = 0 image".into()));
    }
    let a = DMatrix::from_fn(weighted.len(), 6, |r, c| design_row(&protocols[weighted[r]])[c]);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
    if weighted.len() < 6 || rank < 6 {
        return Err(PiddError::InvalidInput(format!(
            "direction set has rank {rank} < 6; need at least 6 non-collinear directions"
        )));
    }
    let pinv = svd
        .pseudo_inverse(1e-12 * smax)
        .map_err(|e| PiddError::Numerical(e.to_string()))?;
    let mut out = vec![[0.0; 6]; n];
    for (v, d) in out.iter_mut().enumerate() {
        if support.is_some_and(|s| !s[v]) {
            continue;
        }
        let log_m0 = zero.iter().map(|&i| magnitudes[i].data()[v]).map(f64::ln).sum::<f64>() / zero.len() as f64;
        let logs: Vec<f64> = weighted.iter().map(|&i| magnitudes[i].data()[v].ln() - log_m0).collect();
        if logs.iter().any(|l| !l.is_finite()) || !log_m0.is_finite() {
            continue;
        }
        let sol = &pinv * DVector::from_vec(logs);
        d.copy_from_slice(sol.as_slice());
    }
    Ok(out)
}

/// `sqrt(3/2) |lambda - mean| / |lambda|` from the tensor eigenvalues.
pub fn fractional_anisotropy(d: &SymTensor) -> f64 {
    let e = eigenvalues(d);
    let mean = (e[0] + e[1] + e[2]) / 3.0;
    let num: f64 = e.iter().map(|l| (l - mean).powi(2)).sum();
    let den: f64 = e.iter().map(|l| l * l).sum();
    if den == 0.0 {
        0.0
    } else {
        (1.5 * num / den).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: u64,
    pub method: String,
    /// `None` when the metric was not requested.
    pub gsr: Option<f64>,
    pub psnr_db: Option<f64>,
    pub psnr_capped: Option<bool>,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    /// Values outside the 1.5 IQR fences.
    pub outliers: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Aggregate> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (sorted.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        };
        let (q1, q3) = (q(0.25), q(0.75));
        let iqr = q3 - q1;
        let outliers = values
            .iter()
            .filter(|&&v| v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr)
            .count();
        Some(Aggregate {
            mean,
            std,
            median: q(0.5),
            outliers,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub count: usize,
    pub gsr: Option<Aggregate>,
    pub psnr_db: Option<Aggregate>,
    pub residual: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// GSR is computed against the synthesis support mask.
    pub gsr_definition: String,
    pub samples: Vec<SampleMetrics>,
    pub aggregates: Vec<MethodSummary>,
}

impl MetricReport {
    pub fn new(samples: Vec<SampleMetrics>) -> Self {
        let mut methods: Vec<String> = samples.iter().map(|s| s.method.clone()).collect();
        methods.sort();
        methods.dedup();
        let aggregates = methods
            .into_iter()
            .map(|method| {
                let rows: Vec<&SampleMetrics> = samples.iter().filter(|s| s.method == method).collect();
                let gsr: Vec<f64> = rows.iter().filter_map(|s| s.gsr).collect();
                let psnr: Vec<f64> = rows.iter().filter_map(|s| s.psnr_db).collect();
                let residual: Vec<f64> = rows.iter().map(|s| s.residual).collect();
                MethodSummary {
                    count: rows.len(),
                    gsr: Aggregate::of(&gsr),
                    psnr_db: Aggregate::of(&psnr),
                    residual: Aggregate::of(&residual).expect("nonempty group"),
                    method,
                }
            })
            .collect();
        MetricReport {
            gsr_definition: "mean |image| outside the object support / mean |image| inside".into(),
            samples,
            aggregates,
        }
    }

    pub fn summary(&self, method: &str) -> Option<&MethodSummary> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    /// One row per (sample, metric).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| PiddError::io(path, e))?);
        let mut body = String::from("sample_id,method,metric,value\n");
        for s in &self.samples {
            for (name, v) in [("gsr", s.gsr), ("psnr_db", s.psnr_db), ("residual", Some(s.residual))] {
                if let Some(v) = v {
                    body.push_str(&format!("{},{},{},{}\n", s.sample_id, s.method, name, v));
                }
            }
        }
        f.write_all(body.as_bytes()).map_err(|e| PiddError::io(path, e))
    }
}
