//! Paired sample generation and on-disk dataset layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/sample_00000/{label,input,coils}.parr   complex64
//! <root>/sample_00000/{mask,phases}.parr         float32
//! <root>/sample_00000/meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coils::{coil_combine, CoilSet};
use crate::error::{PiddError, Result};
use crate::fft::idft2_centered;
use crate::grid::{Axis, ComplexGrid, RealGrid};
use crate::mask::{apply_mask, SamplingMask};
use crate::parr;
use crate::synth::assemble::{add_noise, assemble_ground_truth};
use crate::synth::coils::{make_coils_with, CoilModel};
use crate::synth::diffusion::{synth_magnitude, DiffusionProtocol};
use crate::synth::phantom::{make_phantom, PhantomSpec};
use crate::synth::phase::{phase_map, phase_to_complex, sample_phase_coeffs_with, DEFAULT_HALF_WIDTHS};

pub const MANIFEST: &str = "manifest.json";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";
pub const DATASET_SCHEMA: u32 = 1;

pub const LABEL_ROLES: [Axis; 4] = [Axis::Shot, Axis::Channel, Axis::FreqY, Axis::FreqX];
pub const MASK_ROLES: [Axis; 3] = [Axis::Shot, Axis::FreqY, Axis::FreqX];
pub const COIL_ROLES: [Axis; 3] = [Axis::Channel, Axis::SpaceY, Axis::SpaceX];
pub const PHASE_ROLES: [Axis; 3] = [Axis::Shot, Axis::SpaceY, Axis::SpaceX];

/// Every knob of the forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSpec {
    pub ny: usize,
    pub nx: usize,
    pub shots: usize,
    pub coils: usize,
    pub phase_order: usize,
    /// Coefficient half-widths per polynomial order (radians).
    pub phase_half_widths: Vec<f64>,
    pub b_values: Vec<f64>,
    pub directions: Vec<[f64; 3]>,
    /// Uniform SNR range in dB; `None` generates noiseless inputs.
    pub snr_db: Option<[f64; 2]>,
    pub pf_rate: f64,
    pub randomize_phantom: bool,
    /// Used when `randomize_phantom` is false.
    pub phantom: PhantomSpec,
    pub coil_model: CoilModel,
    /// Draw a random ring rotation per sample.
    pub randomize_coils: bool,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            ny: 64,
            nx: 64,
            shots: 4,
            coils: 8,
            phase_order: 5,
            phase_half_widths: DEFAULT_HALF_WIDTHS.to_vec(),
            b_values: vec![1000.0, 2000.0, 3000.0, 4000.0],
            directions: vec![[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
            snr_db: Some([10.0, 50.0]),
            pf_rate: 1.0,
            randomize_phantom: true,
            phantom: PhantomSpec::default(),
            coil_model: CoilModel::default(),
            randomize_coils: true,
        }
    }
}

impl SynthesisSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PiddError::InvalidConfig(m));
        if self.ny < 16 || self.nx < 16 {
            return bad(format!("grid {}x{} is below 16x16", self.ny, self.nx));
        }
        if self.shots == 0 || self.coils == 0 {
            return bad("shots and coils must be >= 1".into());
        }
        if self.phase_order >= self.phase_half_widths.len() {
            return bad(format!(
                "phase order {} exceeds the {} configured coefficient ranges",
                self.phase_order,
                self.phase_half_widths.len()
            ));
        }
        if self.b_values.is_empty() || self.b_values.iter().any(|b| !(*b >= 0.0)) {
            return bad("b-values must be a nonempty list of values >= 0".into());
        }
        if self.directions.is_empty() {
            return bad("need at least one diffusion direction".into());
        }
        for g in &self.directions {
            DiffusionProtocol::normalized(*g, 0.0)?;
        }
        if let Some([lo, hi]) = self.snr_db {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return bad(format!("invalid SNR range {lo}:{hi}"));
            }
        }
        if !(self.pf_rate > 0.0 && self.pf_rate <= 1.0) {
            return bad(format!("partial Fourier rate {} outside (0, 1]", self.pf_rate));
        }
        Ok(())
    }

    pub fn mask(&self) -> Result<SamplingMask> {
        SamplingMask::interleaved(self.shots, self.ny, self.nx, self.pf_rate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: u64,
    pub seed: u64,
    pub b: f64,
    pub g: [f64; 3],
    #[serde(rename = "L")]
    pub order: usize,
    /// Phase coefficients per shot.
    pub coeffs: Vec<Vec<f64>>,
    /// `None` for noiseless samples.
    pub snr_db: Option<f64>,
    /// `[J, H, ny, nx]`.
    pub dims: [usize; 4],
    pub phantom: PhantomSpec,
    pub coil_model: CoilModel,
}

/// One paired training example.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiShotSample {
    pub meta: SampleMeta,
    /// `[J, H, ky, kx]` fully sampled, noiseless.
    pub label: ComplexGrid,
    /// `[J, H, ky, kx]`, `mask * (label + noise)`.
    pub input: ComplexGrid,
    pub coils: CoilSet,
    pub mask: SamplingMask,
    /// Shot phases in radians, `[J, y, x]`.
    pub phases: RealGrid,
}

impl MultiShotSample {
    pub fn shots(&self) -> usize {
        self.label.dims()[0]
    }

    pub fn support(&self) -> &[bool] {
        self.coils.support()
    }

    /// Coil-combined label k-space `[J, ky, kx]`, i.e. `DFT(P_j m)`.
    pub fn combined_label(&self) -> Result<ComplexGrid> {
        let img = coil_combine(&idft2_centered(&self.label)?, &self.coils)?;
        crate::fft::dft2_centered(&img)
    }

    /// Magnitude image shared by all shots of the label.
    pub fn reference_image(&self) -> Result<RealGrid> {
        crate::recon::shot_magnitude(&self.combined_label()?)
    }
}

fn sample_rng(base_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(index);
    rng
}

/// Sample `index` of the dataset: a pure function of its arguments.
pub fn generate_sample(spec: &SynthesisSpec, base_seed: u64, index: u64) -> Result<MultiShotSample> {
    spec.validate()?;
    let mut rng = sample_rng(base_seed, index);
    let phantom_spec = if spec.randomize_phantom {
        PhantomSpec::randomized(&mut rng)
    } else {
        spec.phantom.clone()
    };
    let mut coil_model = spec.coil_model;
    if spec.randomize_coils {
        coil_model.rotation = rng.random_range(0.0..std::f64::consts::TAU);
    }
    let b = *spec.b_values.choose(&mut rng).expect("validated nonempty");
    let g = *spec.directions.choose(&mut rng).expect("validated nonempty");
    let proto = DiffusionProtocol::normalized(g, b)?;
    let coeffs = (0..spec.shots)
        .map(|_| sample_phase_coeffs_with(spec.phase_order, &spec.phase_half_widths, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let snr_db = spec.snr_db.map(|[lo, hi]| if lo < hi { rng.random_range(lo..hi) } else { lo });

    let phantom = make_phantom(spec.ny, spec.nx, &phantom_spec)?;
    let magnitude = synth_magnitude(&phantom, &proto);
    let coils = make_coils_with(spec.coils, spec.ny, spec.nx, &phantom.support, &coil_model)?;
    let phases = RealGrid::stack(
        coeffs
            .iter()
            .map(|c| phase_map(c, spec.ny, spec.nx))
            .collect::<Result<Vec<_>>>()?,
        Axis::Shot,
    )?;
    let label = assemble_ground_truth(&magnitude, &phase_to_complex(&phases), &coils)?;
    let noisy = match snr_db {
        Some(s) => add_noise(&label, s, &mut rng)?,
        None => label.clone(),
    };
    let mask = spec.mask()?;
    let input = apply_mask(&noisy, &mask)?;
    Ok(MultiShotSample {
        meta: SampleMeta {
            index,
            seed: base_seed,
            b,
            g: proto.g(),
            order: spec.phase_order,
            coeffs: coeffs.iter().map(|c| c.coeffs().to_vec()).collect(),
            snr_db,
            dims: [spec.shots, spec.coils, spec.ny, spec.nx],
            phantom: phantom_spec,
            coil_model,
        },
        label,
        input,
        coils,
        mask,
        phases,
    })
}

/// Lazy stream of samples `0..count`.
pub fn generate_dataset(
    spec: &SynthesisSpec,
    count: u64,
    base_seed: u64,
) -> impl Iterator<Item = Result<MultiShotSample>> + '_ {
    (0..count).map(move |i| generate_sample(spec, base_seed, i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub spec: SynthesisSpec,
    pub count: u64,
    pub base_seed: u64,
}

pub fn sample_dir(root: &Path, index: u64) -> PathBuf {
    root.join(format!("sample_{index:05}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| PiddError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| PiddError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_sample(dir: &Path, sample: &MultiShotSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PiddError::io(dir, e))?;
    parr::write_complex(dir.join("label.parr"), &sample.label)?;
    parr::write_complex(dir.join("input.parr"), &sample.input)?;
    parr::write_real(dir.join("mask.parr"), &sample.mask.to_grid())?;
    parr::write_complex(dir.join("coils.parr"), sample.coils.maps())?;
    parr::write_real(dir.join("phases.parr"), &sample.phases)?;
    write_json(&dir.join("meta.json"), &sample.meta)
}

pub fn read_sample(dir: &Path) -> Result<MultiShotSample> {
    let meta: SampleMeta = read_json(&dir.join("meta.json"))?;
    let label = parr::read_complex(dir.join("label.parr"), &LABEL_ROLES)?;
    let input = parr::read_complex(dir.join("input.parr"), &LABEL_ROLES)?;
    let mask_grid = parr::read_real(dir.join("mask.parr"), &MASK_ROLES)?;
    let coils = CoilSet::from_maps(parr::read_complex(dir.join("coils.parr"), &COIL_ROLES)?)?;
    let phases = parr::read_real(dir.join("phases.parr"), &PHASE_ROLES)?;
    let [j, h, ny, nx] = meta.dims;
    crate::error::check_shape(&[j, h, ny, nx], label.dims())?;
    crate::error::check_shape(label.dims(), input.dims())?;
    crate::error::check_shape(&[j, ny, nx], mask_grid.dims())?;
    crate::error::check_shape(&[j, ny, nx], phases.dims())?;
    if coils.channels() != h {
        return Err(PiddError::ShapeMismatch {
            expected: vec![h, ny, nx],
            found: coils.maps().dims().to_vec(),
        });
    }
    Ok(MultiShotSample {
        meta,
        label,
        input,
        coils,
        mask: SamplingMask::from_grid(&mask_grid)?,
        phases,
    })
}

/// Generate `count` samples into `root` in parallel. The directory is
/// flagged with an `INCOMPLETE` marker until every sample and the manifest
/// are written.
pub fn write_dataset(spec: &SynthesisSpec, count: u64, base_seed: u64, root: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    fs::create_dir_all(root).map_err(|e| PiddError::io(root, e))?;
    let marker = root.join(INCOMPLETE_MARKER);
    fs::write(&marker, b"").map_err(|e| PiddError::io(&marker, e))?;
    (0..count).into_par_iter().try_for_each(|i| {
        let sample = generate_sample(spec, base_seed, i)?;
        write_sample(&sample_dir(root, i), &sample)
    })?;
    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA,
        spec: spec.clone(),
        count,
        base_seed,
    };
    write_json(&root.join(MANIFEST), &manifest)?;
    fs::remove_file(&marker).map_err(|e| PiddError::io(&marker, e))?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    if root.join(INCOMPLETE_MARKER).exists() {
        return Err(PiddError::InvalidInput(format!(
            "dataset {} is incomplete",
            root.display()
        )));
    }
    read_json(&root.join(MANIFEST))
}
