//! Implementations of the `pidd` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::{Axis, RealGrid};
use crate::learned::{
    extract_learned_modulations, pf_postprocess, pidd_reconstruct, train, Acquisition, TrainStatus, TrainingPair,
    WeightSet,
};
use crate::metrics::{gsr, is_capped, psnr, MetricReport, SampleMetrics};
use crate::parr;
use crate::pipeline::cli::{Cli, Command, EvalArgs, ExportArgs, Kind, Method, Mosaic, ReconArgs, SynthArgs, TrainArgs};
use crate::pipeline::config::{
    mark_complete, prepare_output, require_complete, resolve_seed, sha256_file, sha256_files, write_provenance,
    PipelineConfig,
};
use crate::pipeline::pgm::{export_image, ImageKind};
use crate::recon::{
    data_residual, kernels_from_modulations, lowrank_reconstruct, phase_modulations, pocs_reconstruct,
    shot_magnitude, visualize_modulations, zero_filled, zero_filled_image, ReconConfig, ReconReport,
};
use crate::synth::dataset::{
    read_json, read_manifest, read_sample, sample_dir, write_dataset, write_json, MultiShotSample, MANIFEST,
};

pub const RECON_MANIFEST: &str = "recon_manifest.json";
pub const RECON_IMAGE: &str = "recon.parr";
pub const RECON_REPORT: &str = "recon_report.json";
pub const WEIGHTS_DIR: &str = "weights";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const TRAIN_STATUS: &str = "train_status.json";
pub const EVAL_REPORT: &str = "report.json";
pub const EVAL_CSV: &str = "report.csv";

const IMAGE_ROLES: [Axis; 2] = [Axis::SpaceY, Axis::SpaceX];

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Recon(a) => cmd_recon(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

/// Run `f` on a pool of `jobs` threads (the global pool when unset).
fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(PiddError::InvalidConfig("--jobs must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| PiddError::InvalidConfig(format!("thread pool: {e}"))),
    }
}

fn parse_snr(text: &str) -> Result<Option<[f64; 2]>> {
    if text.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let bad = || PiddError::InvalidConfig(format!("--snr expects LO:HI or none, got {text:?}"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo <= hi) {
        return Err(bad());
    }
    Ok(Some([lo, hi]))
}

fn parse_dirs(text: &str) -> Result<Vec<[f64; 3]>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|triple| {
            let v: Vec<f64> = triple
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| PiddError::InvalidConfig(format!("bad direction {triple:?}")))?;
            match v[..] {
                [x, y, z] => Ok([x, y, z]),
                _ => Err(PiddError::InvalidConfig(format!("direction {triple:?} needs three components"))),
            }
        })
        .collect()
}

pub fn dataset_hash(root: &Path) -> Result<String> {
    sha256_file(&root.join(MANIFEST))
}

/// The directory holding `manifest.json`: `dir` itself or `dir/weights`.
pub fn resolve_weights_dir(dir: &Path) -> Result<PathBuf> {
    for cand in [dir.to_path_buf(), dir.join(WEIGHTS_DIR)] {
        if cand.join("manifest.json").is_file() {
            return Ok(cand);
        }
    }
    Err(PiddError::InvalidInput(format!("no weight manifest under {}", dir.display())))
}

/// Hash of the weight manifest and every tensor file, in name order.
pub fn weights_hash(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PiddError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    sha256_files(&files)
}

fn load_samples(root: &Path, count: u64) -> Result<Vec<MultiShotSample>> {
    (0..count).into_par_iter().map(|i| read_sample(&sample_dir(root, i))).collect()
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load_or_default(a.common.config.as_deref())?;
    cfg.seed = resolve_seed(a.seed, cfg.seed)?;
    let s = &mut cfg.synth;
    if let Some(n) = a.size {
        s.ny = n;
        s.nx = n;
    }
    if let Some(v) = a.shots {
        s.shots = v;
    }
    if let Some(v) = a.coils {
        s.coils = v;
    }
    if let Some(v) = a.phase_order {
        s.phase_order = v;
    }
    if let Some(v) = &a.b {
        s.b_values = v.clone();
    }
    if let Some(v) = &a.dirs {
        s.directions = parse_dirs(v)?;
    }
    if let Some(v) = &a.snr {
        s.snr_db = parse_snr(v)?;
    }
    if let Some(v) = a.pf {
        s.pf_rate = v;
    }
    if let Some(v) = a.count {
        cfg.count = v;
    }
    cfg.synth.validate()?;
    prepare_output(&a.out, a.common.force)?;
    write_provenance(&a.out, "synth", &cfg, BTreeMap::new())?;
    // The dataset writer clears the incomplete marker once everything is on disk.
    with_jobs(a.common.jobs, || write_dataset(&cfg.synth, cfg.count, cfg.seed, &a.out))??;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconManifest {
    pub method: String,
    pub count: u64,
    pub dataset_sha256: String,
    pub weights_sha256: Option<String>,
    pub config: ReconConfig,
}

/// Magnitude image and report of one sample.
pub fn reconstruct_sample(
    sample: &MultiShotSample,
    method: Method,
    cfg: &ReconConfig,
    weights: Option<&WeightSet>,
) -> Result<(RealGrid, ReconReport)> {
    let (y, coils, mask) = (&sample.input, &sample.coils, &sample.mask);
    match method {
        Method::Zf => {
            let image = zero_filled_image(y, mask)?;
            let final_residual = data_residual(&zero_filled(y, coils, mask)?, y, coils, mask)?;
            Ok((
                image,
                ReconReport {
                    method: method.name().into(),
                    iters: 0,
                    final_residual,
                    flags: Vec::new(),
                },
            ))
        }
        Method::PocsOracle => {
            let kernels = kernels_from_modulations(&phase_modulations(&sample.phases)?);
            let out = pocs_reconstruct(y, coils, mask, &kernels, cfg)?;
            let mut report = out.report;
            report.method = method.name().into();
            Ok((shot_magnitude(&out.x)?, report))
        }
        Method::Lowrank => {
            let (x, report) = lowrank_reconstruct(y, coils, mask, cfg)?;
            Ok((shot_magnitude(&x)?, report))
        }
        Method::Pidd => {
            let weights = weights.ok_or_else(|| PiddError::InvalidConfig("--method pidd needs --weights".into()))?;
            let acq = Acquisition { y, coils, mask };
            let (x, mut report) = pidd_reconstruct(&acq, weights)?;
            let x = if mask.pf_rate() < 1.0 {
                report.flags.push(format!("pf_postprocess x{}", cfg.pf_repeats));
                let refined = pf_postprocess(&x, &acq, cfg)?;
                report.final_residual = data_residual(&refined, y, coils, mask)?;
                refined
            } else {
                x
            };
            Ok((shot_magnitude(&x)?, report))
        }
    }
}

pub fn cmd_recon(a: &ReconArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load_or_default(a.common.config.as_deref())?;
    let r = &mut cfg.recon;
    if let Some(v) = a.lambda {
        r.lambda = v;
    }
    if let Some(v) = a.iters {
        r.iters = v;
    }
    if let Some(v) = a.svt_rank {
        r.svt_rank = Some(v);
    }
    if let Some(v) = a.window {
        r.window = v;
    }
    if let Some(v) = a.pf_repeats {
        r.pf_repeats = v;
    }
    cfg.recon.validate()?;
    require_complete(&a.data)?;
    let manifest = read_manifest(&a.data)?;
    let mut inputs = BTreeMap::new();
    let dataset_sha256 = dataset_hash(&a.data)?;
    inputs.insert("dataset_manifest".to_string(), dataset_sha256.clone());
    let (weights, weights_sha256) = match (a.method, &a.weights) {
        (Method::Pidd, Some(w)) => {
            let dir = resolve_weights_dir(w)?;
            let ws = WeightSet::load(&dir)?;
            if ws.shots != manifest.spec.shots {
                return Err(PiddError::ShapeMismatch {
                    expected: vec![manifest.spec.shots],
                    found: vec![ws.shots],
                });
            }
            let h = weights_hash(&dir)?;
            inputs.insert("weights".to_string(), h.clone());
            (Some(ws), Some(h))
        }
        (Method::Pidd, None) => {
            return Err(PiddError::InvalidConfig("--method pidd needs --weights".into()));
        }
        _ => (None, None),
    };
    prepare_output(&a.out, a.common.force)?;
    let recon_cfg = cfg.recon.clone();
    with_jobs(a.common.jobs, || {
        (0..manifest.count).into_par_iter().try_for_each(|i| {
            let sample = read_sample(&sample_dir(&a.data, i))?;
            let (image, report) = reconstruct_sample(&sample, a.method, &recon_cfg, weights.as_ref())?;
            let dir = sample_dir(&a.out, i);
            fs::create_dir_all(&dir).map_err(|e| PiddError::io(&dir, e))?;
            parr::write_real(dir.join(RECON_IMAGE), &image)?;
            write_json(&dir.join(RECON_REPORT), &report)
        })
    })??;
    write_json(
        &a.out.join(RECON_MANIFEST),
        &ReconManifest {
            method: a.method.name().into(),
            count: manifest.count,
            dataset_sha256,
            weights_sha256,
            config: cfg.recon.clone(),
        },
    )?;
    write_provenance(&a.out, "recon", &cfg, inputs)?;
    mark_complete(&a.out)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load_or_default(a.common.config.as_deref())?;
    let seed = resolve_seed(a.seed, cfg.train.seed)?;
    cfg.train.seed = seed;
    cfg.network.seed = seed;
    let n = &mut cfg.network;
    if let Some(v) = a.blocks {
        n.blocks = v;
    }
    if let Some(v) = a.layers {
        n.layers = v;
    }
    if let Some(v) = a.features {
        n.features = v;
    }
    if let Some(v) = a.ksize {
        n.ksize = v;
    }
    if a.share_weights {
        n.share_weights = true;
    }
    let t = &mut cfg.train;
    if let Some(v) = a.lr {
        t.lr = v;
    }
    if let Some(v) = a.decay {
        t.decay = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if a.loss_floor.is_some() {
        t.loss_floor = a.loss_floor;
    }
    cfg.network.validate()?;
    cfg.train.validate()?;
    require_complete(&a.data)?;
    let manifest = read_manifest(&a.data)?;
    let mut inputs = BTreeMap::new();
    inputs.insert("dataset_manifest".to_string(), dataset_hash(&a.data)?);
    let pairs: Vec<TrainingPair> = with_jobs(a.common.jobs, || {
        load_samples(&a.data, manifest.count)?.iter().map(TrainingPair::from_sample).collect::<Result<Vec<_>>>()
    })??;
    prepare_output(&a.out, a.common.force)?;
    let log_path = a.out.join(TRAIN_LOG);
    let mut log = fs::File::create(&log_path).map_err(|e| PiddError::io(&log_path, e))?;
    let mut log_err = None;
    let outcome = train(&pairs, &cfg.network, &cfg.train, |rec| {
        eprintln!("epoch {} lr {:.3e} loss {:.6e}", rec.epoch, rec.lr, rec.loss);
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(PiddError::io(&log_path, e));
    }
    outcome.weights.save(&a.out.join(WEIGHTS_DIR))?;
    write_json(&a.out.join(TRAIN_STATUS), &outcome.status)?;
    write_provenance(&a.out, "train", &cfg, inputs)?;
    mark_complete(&a.out)?;
    if let TrainStatus::NonFinite { epoch, step } = outcome.status {
        return Err(PiddError::Numerical(format!(
            "non-finite loss at epoch {epoch}, step {step}; last finite weights saved"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub metrics: Vec<String>,
    pub dataset_sha256: String,
    /// Method to reconstruction manifest hash.
    pub recon_sha256: BTreeMap<String, String>,
    pub report: MetricReport,
}

fn parse_metrics(text: &str) -> Result<(bool, bool)> {
    let names: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(PiddError::InvalidConfig("--metrics is empty".into()));
    }
    let (mut g, mut p) = (false, false);
    for n in names {
        match n {
            "gsr" => g = true,
            "psnr" => p = true,
            other => return Err(PiddError::InvalidConfig(format!("unknown metric {other:?}"))),
        }
    }
    Ok((g, p))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let cfg = PipelineConfig::load_or_default(a.common.config.as_deref())?;
    let (want_gsr, want_psnr) = parse_metrics(&a.metrics)?;
    require_complete(&a.data)?;
    let manifest = read_manifest(&a.data)?;
    let dataset_sha256 = dataset_hash(&a.data)?;
    let mut recons = Vec::new();
    let mut recon_sha256 = BTreeMap::new();
    for dir in &a.recon {
        require_complete(dir)?;
        let rm: ReconManifest = read_json(&dir.join(RECON_MANIFEST))?;
        if rm.count != manifest.count {
            return Err(PiddError::InvalidInput(format!(
                "{} holds {} samples, dataset has {}",
                dir.display(),
                rm.count,
                manifest.count
            )));
        }
        if rm.dataset_sha256 != dataset_sha256 {
            return Err(PiddError::InvalidInput(format!(
                "{} was reconstructed from a different dataset",
                dir.display()
            )));
        }
        recon_sha256.insert(rm.method.clone(), sha256_file(&dir.join(RECON_MANIFEST))?);
        recons.push((dir.clone(), rm.method));
    }
    prepare_output(&a.out, a.common.force)?;
    let rows: Vec<Vec<SampleMetrics>> = with_jobs(a.common.jobs, || {
        (0..manifest.count)
            .into_par_iter()
            .map(|i| {
                let sample = read_sample(&sample_dir(&a.data, i))?;
                let reference = sample.reference_image()?;
                recons
                    .iter()
                    .map(|(dir, method)| {
                        let sdir = sample_dir(dir, i);
                        let image = parr::read_real(sdir.join(RECON_IMAGE), &IMAGE_ROLES)?;
                        let report: ReconReport = read_json(&sdir.join(RECON_REPORT))?;
                        let psnr_db = if want_psnr { Some(psnr(&image, &reference)?) } else { None };
                        Ok(SampleMetrics {
                            sample_id: i,
                            method: method.clone(),
                            gsr: if want_gsr { Some(gsr(&image, sample.support())?) } else { None },
                            psnr_db,
                            psnr_capped: psnr_db.map(is_capped),
                            residual: report.final_residual,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let metrics = [(want_gsr, "gsr"), (want_psnr, "psnr")]
        .iter()
        .filter(|(w, _)| *w)
        .map(|(_, n)| n.to_string())
        .collect();
    let report = EvalReport {
        metrics,
        dataset_sha256: dataset_sha256.clone(),
        recon_sha256: recon_sha256.clone(),
        report: MetricReport::new(rows.into_iter().flatten().collect()),
    };
    for s in &report.report.aggregates {
        let fmt = |a: &Option<crate::metrics::Aggregate>| a.as_ref().map_or("-".into(), |a| format!("{:.4}", a.mean));
        eprintln!("{}: n={} gsr={} psnr={}", s.method, s.count, fmt(&s.gsr), fmt(&s.psnr_db));
    }
    write_json(&a.out.join(EVAL_REPORT), &report)?;
    report.report.write_csv(&a.out.join(EVAL_CSV))?;
    let mut inputs: BTreeMap<String, String> =
        recon_sha256.into_iter().map(|(m, h)| (format!("recon:{m}"), h)).collect();
    inputs.insert("dataset_manifest".to_string(), dataset_sha256);
    write_provenance(&a.out, "eval", &cfg, inputs)?;
    mark_complete(&a.out)
}

pub fn cmd_export(a: &ExportArgs) -> Result<()> {
    if a.out.exists() && !a.force {
        return Err(PiddError::InvalidConfig(format!(
            "output {} already exists; pass --force to overwrite",
            a.out.display()
        )));
    }
    let kind = match a.kind {
        Kind::Magnitude => ImageKind::Magnitude,
        Kind::Phase => ImageKind::Phase,
    };
    let (image, kind) = match (a.mosaic, &a.input) {
        (Some(m), _) => {
            let sample = read_sample(a.sample.as_deref().expect("clap requires --sample"))?;
            let mosaic = match m {
                Mosaic::Modulations => visualize_modulations(&phase_modulations(&sample.phases)?)?,
                Mosaic::Learned => {
                    let w = a
                        .weights
                        .as_deref()
                        .ok_or_else(|| PiddError::InvalidConfig("--mosaic learned needs --weights".into()))?;
                    let ws = WeightSet::load(&resolve_weights_dir(w)?)?;
                    extract_learned_modulations(&ws, &sample)?.mosaic
                }
            };
            match kind {
                ImageKind::Magnitude => (mosaic.magnitude, kind),
                ImageKind::Phase => (mosaic.angle, kind),
            }
        }
        (None, Some(input)) => {
            let tensor = parr::read(input)?;
            if tensor.dims().len() != 2 {
                return Err(PiddError::Dimension(format!(
                    "export needs a 2-D tensor, {} has dims {:?}",
                    input.display(),
                    tensor.dims()
                )));
            }
            let image = match tensor {
                t @ parr::Tensor::Real { .. } => t.into_real(&IMAGE_ROLES)?,
                t @ parr::Tensor::Complex { .. } => {
                    let z = t.into_complex(&IMAGE_ROLES)?;
                    match kind {
                        ImageKind::Magnitude => z.abs(),
                        ImageKind::Phase => z.map(|v| v.arg()),
                    }
                }
            };
            (image, kind)
        }
        (None, None) => return Err(PiddError::InvalidConfig("export needs --input or --mosaic".into())),
    };
    export_image(&image, kind, &a.out)?;
    Ok(())
}
