//! Adam training of the unrolled network on paired synthetic samples.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coils::CoilSet;
use crate::error::{PiddError, Result};
use crate::grid::ComplexGrid;
use crate::learned::network::{NetworkConfig, WeightSet};
use crate::learned::unrolled::{backward, pidd_forward, Acquisition};
use crate::mask::SamplingMask;
use crate::synth::dataset::MultiShotSample;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning-rate factor applied once per epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop once an epoch's mean loss falls below this value.
    pub loss_floor: Option<f64>,
    pub seed: u64,
    /// Layer indices (within every block) whose parameters stay fixed.
    pub frozen_layers: Vec<usize>,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            decay: 0.99,
            epochs: 30,
            batch_size: 1,
            loss_floor: None,
            seed: 0,
            frozen_layers: Vec::new(),
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PiddError::InvalidConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(PiddError::InvalidConfig(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        if self.batch_size == 0 {
            return Err(PiddError::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay.powi(epoch as i32)
    }
}

/// One training example: measurements and the coil-combined label k-space.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub y: ComplexGrid,
    pub coils: CoilSet,
    pub mask: SamplingMask,
    pub target: ComplexGrid,
}

impl TrainingPair {
    pub fn from_sample(sample: &MultiShotSample) -> Result<Self> {
        Ok(TrainingPair {
            y: sample.input.clone(),
            coils: sample.coils.clone(),
            mask: sample.mask.clone(),
            target: sample.combined_label()?,
        })
    }

    pub fn acquisition(&self) -> Acquisition<'_> {
        Acquisition {
            y: &self.y,
            coils: &self.coils,
            mask: &self.mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-sample loss over the epoch, evaluated before each update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    LossFloor { epoch: usize },
    NonFinite { epoch: usize, step: usize },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final weights, or the last finite ones when training aborted.
    pub weights: WeightSet,
    pub log: Vec<EpochRecord>,
    pub status: TrainStatus,
}

#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], trainable: &[bool], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// Xavier initialization followed by [`train_from`].
pub fn train(
    data: &[TrainingPair],
    ncfg: &NetworkConfig,
    tcfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let shots = data
        .first()
        .ok_or_else(|| PiddError::InvalidInput("training set is empty".into()))?
        .mask
        .shots();
    train_from(WeightSet::xavier(ncfg, shots)?, data, tcfg, on_epoch)
}

/// Loss and gradient of one sample.
pub fn sample_gradient(pair: &TrainingPair, weights: &WeightSet) -> Result<(f64, Vec<f64>)> {
    let acq = pair.acquisition();
    let pass = pidd_forward(&acq, weights)?;
    let (value, grads) = backward(&acq, weights, &pass, &pair.target)?;
    Ok((value, grads.to_flat()))
}

pub fn train_from(
    mut weights: WeightSet,
    data: &[TrainingPair],
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    weights.config.validate()?;
    if data.is_empty() {
        return Err(PiddError::InvalidInput("training set is empty".into()));
    }
    if let Some(&bad) = tcfg.frozen_layers.iter().find(|&&l| l >= weights.config.layers) {
        return Err(PiddError::InvalidConfig(format!("frozen layer {bad} does not exist")));
    }
    let n = weights.param_count();
    let mut trainable = vec![true; n];
    for (layer, start, end) in weights.layer_ranges() {
        if tcfg.frozen_layers.contains(&layer) {
            trainable[start..end].iter_mut().for_each(|t| *t = false);
        }
    }
    let mut params = weights.to_flat();
    let mut adam = Adam::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut step = 0;
    for epoch in 0..tcfg.epochs {
        if tcfg.shuffle {
            order.shuffle(&mut rng);
        }
        let lr = tcfg.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let mut grad = vec![0.0; n];
            for &i in batch {
                let (value, g) = sample_gradient(&data[i], &weights)?;
                if !value.is_finite() || g.iter().any(|v| !v.is_finite()) {
                    return Ok(TrainOutcome {
                        weights,
                        log,
                        status: TrainStatus::NonFinite { epoch, step },
                    });
                }
                epoch_loss += value;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b / batch.len() as f64);
            }
            let before = params.clone();
            adam.step(&mut params, &grad, &trainable, lr);
            if params.iter().any(|v| !v.is_finite()) {
                weights.set_flat(&before)?;
                return Ok(TrainOutcome {
                    weights,
                    log,
                    status: TrainStatus::NonFinite { epoch, step },
                });
            }
            weights.set_flat(&params)?;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            lr,
            loss: epoch_loss / data.len() as f64,
        };
        on_epoch(&record);
        log.push(record);
        if tcfg.loss_floor.is_some_and(|floor| log[epoch].loss < floor) {
            return Ok(TrainOutcome {
                weights,
                log,
                status: TrainStatus::LossFloor { epoch },
            });
        }
    }
    Ok(TrainOutcome {
        weights,
        log,
        status: TrainStatus::Completed,
    })
}

/// Mean per-sample loss of `weights` over `data`.
pub fn evaluate_loss(data: &[TrainingPair], weights: &WeightSet) -> Result<f64> {
    let mut total = 0.0;
    for pair in data {
        let pass = pidd_forward(&pair.acquisition(), weights)?;
        total += crate::learned::unrolled::loss(&pass.outputs, &pair.target)?;
    }
    Ok(total / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::dataset::{generate_sample, SynthesisSpec};

    fn pairs(count: u64) -> Vec<TrainingPair> {
        let spec = SynthesisSpec {
            ny: 16,
            nx: 16,
            shots: 2,
            coils: 2,
            ..SynthesisSpec::default()
        };
        (0..count)
            .map(|i| TrainingPair::from_sample(&generate_sample(&spec, 21, i).unwrap()).unwrap())
            .collect()
    }

    fn small_net() -> NetworkConfig {
        NetworkConfig {
            blocks: 2,
            layers: 2,
            features: 4,
            ksize: 3,
            share_weights: false,
            seed: 1,
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = TrainConfig::default();
        assert!((cfg.lr_at(10) - 0.001 * 0.99f64.powi(10)).abs() < 1e-18);
        let flat = TrainConfig { decay: 1.0, ..cfg };
        assert_eq!(flat.lr_at(25), flat.lr);
        assert!(TrainConfig { decay: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let data = pairs(4);
        let tcfg = TrainConfig {
            lr: 3e-3,
            epochs: 4,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&data, &small_net(), &tcfg, |_| {}).unwrap();
        let b = train(&data, &small_net(), &tcfg, |_| {}).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log, b.log);
        assert_eq!(a.status, TrainStatus::Completed);
        let init = WeightSet::xavier(&small_net(), 2).unwrap();
        assert!(evaluate_loss(&data, &a.weights).unwrap() < evaluate_loss(&data, &init).unwrap());
    }

    #[test]
    fn frozen_layers_stay_bit_identical() {
        let data = pairs(2);
        let tcfg = TrainConfig {
            epochs: 2,
            frozen_layers: vec![0],
            ..TrainConfig::default()
        };
        let init = WeightSet::xavier(&small_net(), 2).unwrap();
        let out = train_from(init.clone(), &data, &tcfg, |_| {}).unwrap();
        for (a, b) in out.weights.blocks.iter().zip(&init.blocks) {
            assert_eq!(a[0], b[0]);
            assert_ne!(a[1], b[1]);
        }
        let (_, g) = sample_gradient(&data[0], &init).unwrap();
        assert!(g[..init.blocks[0][0].param_count()].iter().any(|&v| v != 0.0));
        let bad = TrainConfig {
            frozen_layers: vec![5],
            ..tcfg
        };
        assert!(train_from(init, &data, &bad, |_| {}).is_err());
    }

    #[test]
    fn loss_floor_stops_early_and_zero_epochs_keep_init() {
        let data = pairs(2);
        let tcfg = TrainConfig {
            epochs: 5,
            loss_floor: Some(f64::INFINITY),
            ..TrainConfig::default()
        };
        let out = train(&data, &small_net(), &tcfg, |_| {}).unwrap();
        assert_eq!(out.status, TrainStatus::LossFloor { epoch: 0 });
        assert_eq!(out.log.len(), 1);
        let none = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let out = train(&data, &small_net(), &none, |_| {}).unwrap();
        assert_eq!(out.weights, WeightSet::xavier(&small_net(), 2).unwrap());
    }

    #[test]
    fn non_finite_loss_returns_last_good_weights() {
        let mut data = pairs(1);
        data[0].target.data_mut()[0].re = f64::NAN;
        let init = WeightSet::xavier(&small_net(), 2).unwrap();
        let out = train_from(init.clone(), &data, &TrainConfig::default(), |_| {}).unwrap();
        assert_eq!(out.status, TrainStatus::NonFinite { epoch: 0, step: 0 });
        assert_eq!(out.weights, init);
    }
}
