//! The per-block convolutional network acting on coil-combined multi-shot
//! k-space, with `2J` real channels (re/im interleaved per shot).

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PiddError, Result};
use crate::grid::{Axis, ComplexGrid, Domain, RealGrid};
use crate::learned::conv::{conv_apply, conv_backward, pad_planes, ConvLayer};
use crate::parr;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Unrolled block count `K`.
    pub blocks: usize,
    pub layers: usize,
    pub features: usize,
    pub ksize: usize,
    pub share_weights: bool,
    pub seed: u64,
}

/// Full-size architecture: 10 blocks of six 3x3 layers with 48 features.
impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            blocks: 10,
            layers: 6,
            features: 48,
            ksize: 3,
            share_weights: false,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// Reduced architecture for single-core training: 3 blocks of three
    /// layers with 16 features.
    pub fn desk() -> Self {
        NetworkConfig {
            blocks: 3,
            layers: 3,
            features: 16,
            ..NetworkConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.layers == 0 || self.features == 0 {
            return Err(PiddError::InvalidConfig(
                "blocks, layers and features must be >= 1".into(),
            ));
        }
        if self.ksize % 2 == 0 {
            return Err(PiddError::InvalidConfig(format!("ksize {} must be odd", self.ksize)));
        }
        Ok(())
    }

    /// `(c_out, c_in)` of every layer for `shots` shots.
    pub fn layer_shapes(&self, shots: usize) -> Vec<(usize, usize)> {
        let io = 2 * shots;
        (0..self.layers)
            .map(|l| {
                let c_in = if l == 0 { io } else { self.features };
                let c_out = if l + 1 == self.layers { io } else { self.features };
                (c_out, c_in)
            })
            .collect()
    }

    fn weight_blocks(&self) -> usize {
        if self.share_weights {
            1
        } else {
            self.blocks
        }
    }
}

/// Parameters of all blocks; a single stored block when weights are shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub config: NetworkConfig,
    pub shots: usize,
    pub blocks: Vec<Vec<ConvLayer>>,
}

impl WeightSet {
    fn build(cfg: &NetworkConfig, shots: usize, mut fill: impl FnMut(&mut ConvLayer, usize)) -> Result<Self> {
        cfg.validate()?;
        if shots == 0 {
            return Err(PiddError::InvalidConfig("network needs at least one shot".into()));
        }
        let shapes = cfg.layer_shapes(shots);
        let blocks = (0..cfg.weight_blocks())
            .map(|_| {
                shapes
                    .iter()
                    .enumerate()
                    .map(|(l, &(o, i))| {
                        let mut layer = ConvLayer::zeros(o, i, cfg.ksize);
                        fill(&mut layer, l);
                        layer
                    })
                    .collect()
            })
            .collect();
        Ok(WeightSet {
            config: cfg.clone(),
            shots,
            blocks,
        })
    }

    pub fn zeros(cfg: &NetworkConfig, shots: usize) -> Result<Self> {
        Self::build(cfg, shots, |_, _| {})
    }

    /// Xavier-uniform kernels, zero biases, drawn from `cfg.seed`.
    pub fn xavier(cfg: &NetworkConfig, shots: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self::build(cfg, shots, |layer, _| {
            let area = (layer.k * layer.k) as f64;
            let limit = (6.0 / (area * (layer.c_in + layer.c_out) as f64)).sqrt();
            layer.weight.iter_mut().for_each(|v| *v = rng.random_range(-limit..limit));
        })
    }

    /// First layer copies the inputs into the leading features, middle
    /// layers pass them on, the last layer copies them back. The network then
    /// computes `ReLU(x)` per channel. Needs `features >= 2J`.
    pub fn identity(cfg: &NetworkConfig, shots: usize) -> Result<Self> {
        let io = 2 * shots;
        if cfg.layers > 1 && cfg.features < io {
            return Err(PiddError::InvalidConfig(format!(
                "identity construction needs features >= {io}"
            )));
        }
        let c = cfg.ksize / 2;
        Self::build(cfg, shots, |layer, _| {
            for ch in 0..io {
                let idx = layer.w_index(ch, ch, c, c);
                layer.weight[idx] = 1.0;
            }
        })
    }

    /// Weights computing the oracle interpolation for identical shot phases,
    /// `out_i = (1/(J-1)) sum_{j != i} x_j`, through `x = ReLU(x) - ReLU(-x)`.
    /// Needs `J >= 2`, `layers >= 2` and `features >= 4J`.
    pub fn shot_average(cfg: &NetworkConfig, shots: usize) -> Result<Self> {
        let io = 2 * shots;
        if shots < 2 || cfg.layers < 2 || cfg.features < 2 * io {
            return Err(PiddError::InvalidConfig(format!(
                "shot-average construction needs J >= 2, layers >= 2, features >= {}",
                2 * io
            )));
        }
        let last = cfg.layers - 1;
        let c = cfg.ksize / 2;
        let scale = 1.0 / (shots - 1) as f64;
        Self::build(cfg, shots, |layer, l| {
            if l == 0 {
                for ch in 0..io {
                    let (p, n) = (layer.w_index(2 * ch, ch, c, c), layer.w_index(2 * ch + 1, ch, c, c));
                    layer.weight[p] = 1.0;
                    layer.weight[n] = -1.0;
                }
            } else if l < last {
                for f in 0..2 * io {
                    let idx = layer.w_index(f, f, c, c);
                    layer.weight[idx] = 1.0;
                }
            } else {
                for i in 0..shots {
                    for j in (0..shots).filter(|&j| j != i) {
                        for part in 0..2 {
                            let (out, src) = (2 * i + part, 2 * j + part);
                            let (p, n) = (layer.w_index(out, 2 * src, c, c), layer.w_index(out, 2 * src + 1, c, c));
                            layer.weight[p] = scale;
                            layer.weight[n] = -scale;
                        }
                    }
                }
            }
        })
    }

    /// Layers used by unrolled block `k`.
    pub fn block(&self, k: usize) -> &[ConvLayer] {
        if self.config.share_weights {
            &self.blocks[0]
        } else {
            &self.blocks[k]
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().flatten().map(ConvLayer::param_count).sum()
    }

    /// All parameters in storage order (per block, per layer: kernel then bias).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.blocks.iter().flatten() {
            out.extend(&layer.weight);
            out.extend(&layer.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(PiddError::ShapeMismatch {
                expected: vec![self.param_count()],
                found: vec![flat.len()],
            });
        }
        let mut off = 0;
        for layer in self.blocks.iter_mut().flatten() {
            let n = layer.weight.len();
            layer.weight.copy_from_slice(&flat[off..off + n]);
            off += n;
            let n = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Flat index ranges `(start, end)` of every layer's parameters, tagged
    /// with the layer index within its block.
    pub fn layer_ranges(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        let mut off = 0;
        for block in &self.blocks {
            for (l, layer) in block.iter().enumerate() {
                out.push((l, off, off + layer.param_count()));
                off += layer.param_count();
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .flatten()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// `dir/manifest.json` plus one PARR file per kernel and bias.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| PiddError::io(dir, e))?;
        let mut tensors = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (l, layer) in block.iter().enumerate() {
                let wname = format!("block{b}_layer{l}_weight.parr");
                let bname = format!("block{b}_layer{l}_bias.parr");
                let wdims = vec![layer.c_out, layer.c_in, layer.k, layer.k];
                parr::write(
                    dir.join(&wname),
                    &parr::Tensor::Real {
                        dims: wdims.clone(),
                        data: layer.weight.iter().map(|&v| v as f32).collect(),
                    },
                )?;
                parr::write(
                    dir.join(&bname),
                    &parr::Tensor::Real {
                        dims: vec![layer.c_out],
                        data: layer.bias.iter().map(|&v| v as f32).collect(),
                    },
                )?;
                tensors.push(TensorEntry { name: wname, dims: wdims });
                tensors.push(TensorEntry { name: bname, dims: vec![layer.c_out] });
            }
        }
        let manifest = WeightManifest {
            config: self.config.clone(),
            shots: self.shots,
            tensors,
        };
        crate::synth::dataset::write_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: WeightManifest = crate::synth::dataset::read_json(&dir.join("manifest.json"))?;
        let mut ws = WeightSet::zeros(&manifest.config, manifest.shots)?;
        let expected = 2 * ws.blocks.iter().map(Vec::len).sum::<usize>();
        if manifest.tensors.len() != expected {
            return Err(PiddError::Format(format!(
                "weight manifest lists {} tensors, expected {expected}",
                manifest.tensors.len()
            )));
        }
        let mut entries = manifest.tensors.iter();
        for layer in ws.blocks.iter_mut().flatten() {
            for (target, want) in [
                (&mut layer.weight, vec![layer.c_out, layer.c_in, layer.k, layer.k]),
                (&mut layer.bias, vec![layer.c_out]),
            ] {
                let entry = entries.next().expect("count checked");
                match parr::read(dir.join(&entry.name))? {
                    parr::Tensor::Real { dims, data } if dims == want && entry.dims == want => {
                        target.iter_mut().zip(data).for_each(|(t, v)| *t = v as f64);
                    }
                    other => {
                        return Err(PiddError::ShapeMismatch {
                            expected: want,
                            found: other.dims().to_vec(),
                        })
                    }
                }
            }
        }
        if !ws.is_finite() {
            return Err(PiddError::Numerical("loaded weights contain non-finite values".into()));
        }
        Ok(ws)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightManifest {
    config: NetworkConfig,
    shots: usize,
    tensors: Vec<TensorEntry>,
}

/// `[J, ky, kx]` complex to `2J` real planes.
pub(crate) fn to_channels(z: &ComplexGrid, scale: f64) -> Vec<f64> {
    let j = z.dims()[0];
    let plane = z.plane_len();
    let mut out = vec![0.0; 2 * j * plane];
    for s in 0..j {
        for (i, v) in z.plane(s).iter().enumerate() {
            out[2 * s * plane + i] = v.re * scale;
            out[(2 * s + 1) * plane + i] = v.im * scale;
        }
    }
    out
}

pub(crate) fn from_channels(ch: &[f64], j: usize, ny: usize, nx: usize, scale: f64) -> Result<ComplexGrid> {
    let plane = ny * nx;
    let mut data = Vec::with_capacity(j * plane);
    for s in 0..j {
        for i in 0..plane {
            data.push(Complex64::new(ch[2 * s * plane + i], ch[(2 * s + 1) * plane + i]) * scale);
        }
    }
    ComplexGrid::new(vec![j, ny, nx], vec![Axis::Shot, Axis::FreqY, Axis::FreqX], data)
}

/// Intermediate values of one network evaluation.
#[derive(Debug, Clone)]
pub(crate) struct NetTrace {
    /// Zero-padded input of every layer.
    pub padded: Vec<Vec<f64>>,
    /// Active-unit masks of every hidden layer (`pre-activation > 0`).
    pub active: Vec<Vec<bool>>,
    pub output: Vec<f64>,
}

pub(crate) fn net_forward(layers: &[ConvLayer], x: Vec<f64>, h: usize, w: usize) -> NetTrace {
    let mut padded = Vec::with_capacity(layers.len());
    let mut active = Vec::with_capacity(layers.len().saturating_sub(1));
    let mut cur = x;
    for (l, layer) in layers.iter().enumerate() {
        let p = pad_planes(&cur, layer.c_in, h, w, layer.k / 2);
        let mut out = conv_apply(layer, &p, h, w, true);
        padded.push(p);
        if l + 1 < layers.len() {
            let mask: Vec<bool> = out.iter().map(|&v| v > 0.0).collect();
            for (v, &m) in out.iter_mut().zip(&mask) {
                if !m {
                    *v = 0.0;
                }
            }
            active.push(mask);
        }
        cur = out;
    }
    NetTrace {
        padded,
        active,
        output: cur,
    }
}

/// Backpropagate `grad_out` through a recorded evaluation, accumulating
/// parameter gradients scaled by `param_scale` into `grads`. Returns the
/// input gradient when `need_input` is set.
pub(crate) fn net_backward(
    layers: &[ConvLayer],
    trace: &NetTrace,
    grad_out: Vec<f64>,
    h: usize,
    w: usize,
    grads: &mut [ConvLayer],
    param_scale: f64,
    need_input: bool,
) -> Option<Vec<f64>> {
    let mut g = grad_out;
    if param_scale != 1.0 {
        g.iter_mut().for_each(|v| *v *= param_scale);
    }
    for l in (0..layers.len()).rev() {
        let want_input = l > 0 || need_input;
        let gi = conv_backward(&layers[l], &trace.padded[l], &g, h, w, &mut grads[l], want_input);
        match gi {
            Some(mut gi) if l > 0 => {
                for (v, &m) in gi.iter_mut().zip(&trace.active[l - 1]) {
                    if !m {
                        *v = 0.0;
                    }
                }
                g = gi;
            }
            Some(gi) => {
                if param_scale != 1.0 {
                    return Some(gi.into_iter().map(|v| v / param_scale).collect());
                }
                return Some(gi);
            }
            None => return None,
        }
    }
    None
}

fn check_input(z: &ComplexGrid, weights: &WeightSet) -> Result<(usize, usize, usize)> {
    let (ny, nx) = z.require_domain(Domain::Kspace)?;
    if z.ndim() != 3 || z.dims()[0] != weights.shots {
        return Err(PiddError::ShapeMismatch {
            expected: vec![weights.shots, ny, nx],
            found: z.dims().to_vec(),
        });
    }
    Ok((z.dims()[0], ny, nx))
}

/// Network of unrolled block `block` applied to `[J, ky, kx]`.
pub fn mkl_forward(z: &ComplexGrid, weights: &WeightSet, block: usize) -> Result<ComplexGrid> {
    let (j, ny, nx) = check_input(z, weights)?;
    if block >= weights.config.blocks {
        return Err(PiddError::InvalidInput(format!(
            "block {block} out of range for K = {}",
            weights.config.blocks
        )));
    }
    let trace = net_forward(weights.block(block), to_channels(z, 1.0), ny, nx);
    from_channels(&trace.output, j, ny, nx, 1.0)
}

/// Per-layer activations `[C, ky, kx]` of one evaluation, for inspection.
pub fn mkl_activations(z: &ComplexGrid, weights: &WeightSet, block: usize) -> Result<Vec<RealGrid>> {
    let (_, ny, nx) = check_input(z, weights)?;
    let layers = weights.block(block);
    let trace = net_forward(layers, to_channels(z, 1.0), ny, nx);
    let roles = vec![Axis::Channel, Axis::FreqY, Axis::FreqX];
    let mut out = Vec::new();
    for l in 1..layers.len() {
        let c = layers[l].c_in;
        let p = layers[l].k / 2;
        let (ph, pw) = (ny + 2 * p, nx + 2 * p);
        let mut data = Vec::with_capacity(c * ny * nx);
        for ch in 0..c {
            for y in 0..ny {
                let s = ch * ph * pw + (y + p) * pw + p;
                data.extend_from_slice(&trace.padded[l][s..s + nx]);
            }
        }
        out.push(RealGrid::new(vec![c, ny, nx], roles.clone(), data)?);
    }
    out.push(RealGrid::new(vec![layers.last().map_or(0, |l| l.c_out), ny, nx], roles, trace.output)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(layers: usize, features: usize) -> NetworkConfig {
        NetworkConfig {
            blocks: 2,
            layers,
            features,
            ..NetworkConfig::default()
        }
    }

    fn grid(j: usize, n: usize, f: impl Fn(usize) -> Complex64) -> ComplexGrid {
        ComplexGrid::new(
            vec![j, n, n],
            vec![Axis::Shot, Axis::FreqY, Axis::FreqX],
            (0..j * n * n).map(f).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_passes_nonnegative_input() {
        let ws = WeightSet::identity(&cfg(3, 8), 2).unwrap();
        let z = grid(2, 6, |i| Complex64::new((i % 5) as f64, (i % 3) as f64 * 0.5));
        assert_eq!(mkl_forward(&z, &ws, 1).unwrap(), z);
        let neg = grid(2, 6, |i| Complex64::new(-1.0 - i as f64, 2.0));
        let out = mkl_forward(&neg, &ws, 0).unwrap();
        assert!(out.data().iter().all(|v| v.re == 0.0 && v.im == 2.0));
    }

    #[test]
    fn zero_weights_give_zero() {
        let ws = WeightSet::zeros(&cfg(2, 4), 2).unwrap();
        let z = grid(2, 5, |i| Complex64::new(i as f64, -(i as f64)));
        assert!(mkl_forward(&z, &ws, 0).unwrap().data().iter().all(|v| *v == Complex64::default()));
    }

    #[test]
    fn last_layer_is_linear() {
        let ws = WeightSet::xavier(&cfg(3, 6), 2).unwrap();
        let z = grid(2, 8, |i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()));
        let mut scaled = ws.clone();
        let alpha = 2.5;
        let last = scaled.blocks[0].last_mut().unwrap();
        last.weight.iter_mut().for_each(|v| *v *= alpha);
        last.bias.iter_mut().for_each(|v| *v *= alpha);
        let a = mkl_forward(&z, &ws, 0).unwrap();
        let b = mkl_forward(&z, &scaled, 0).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x * alpha - y).norm() < 1e-12);
        }
    }

    #[test]
    fn shot_average_construction() {
        let ws = WeightSet::shot_average(&cfg(3, 12), 3).unwrap();
        let z = grid(3, 4, |i| Complex64::new((i as f64).sin(), (i as f64 * 1.3).cos()));
        let out = mkl_forward(&z, &ws, 0).unwrap();
        for i in 0..3 {
            for p in 0..16 {
                let expected: Complex64 = (0..3).filter(|&j| j != i).map(|j| z.plane(j)[p]).sum::<Complex64>() * 0.5;
                assert!((out.plane(i)[p] - expected).norm() < 1e-12);
            }
        }
        assert!(WeightSet::shot_average(&cfg(3, 8), 3).is_err());
    }

    #[test]
    fn flat_round_trip_and_save_load() {
        let ws = WeightSet::xavier(&cfg(2, 4), 2).unwrap();
        let mut other = WeightSet::zeros(&cfg(2, 4), 2).unwrap();
        other.set_flat(&ws.to_flat()).unwrap();
        assert_eq!(other, ws);
        let dir = tempfile::tempdir().unwrap();
        ws.save(dir.path()).unwrap();
        let back = WeightSet::load(dir.path()).unwrap();
        for (a, b) in back.to_flat().iter().zip(ws.to_flat()) {
            assert_eq!(*a, b as f32 as f64);
        }
        assert_eq!(back.config, ws.config);
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig { ksize: 4, ..Default::default() }.validate().is_err());
        assert!(NetworkConfig { blocks: 0, ..Default::default() }.validate().is_err());
        let shared = NetworkConfig { share_weights: true, ..Default::default() };
        assert_eq!(WeightSet::xavier(&shared, 2).unwrap().blocks.len(), 1);
    }
}
