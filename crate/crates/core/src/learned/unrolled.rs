//! The unrolled network: `K` blocks of data consistency followed by the
//! kernel-learning network, its loss and its exact reverse-mode gradient.

use num_complex::Complex64;

use crate::coils::CoilSet;
use crate::error::{check_shape, PiddError, Result};
use crate::grid::ComplexGrid;
use crate::learned::conv::ConvLayer;
use crate::learned::network::{from_channels, net_backward, net_forward, to_channels, NetTrace, WeightSet};
use crate::mask::SamplingMask;
use crate::recon::dc::{data_consistency, data_residual, dc_linear, zero_filled};
use crate::recon::lowrank::lowrank_refine;
use crate::recon::pocs::{ReconConfig, ReconReport};

/// Data-consistency weight inside the unrolled blocks.
pub const UNROLLED_LAMBDA: f64 = 1.0;

/// Measurements of one sample as consumed by the unrolled network.
#[derive(Debug, Clone, Copy)]
pub struct Acquisition<'a> {
    pub y: &'a ComplexGrid,
    pub coils: &'a CoilSet,
    pub mask: &'a SamplingMask,
}

/// Block outputs `X^1..X^K` plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub outputs: Vec<ComplexGrid>,
    /// Normalization applied around every network evaluation.
    pub scale: f64,
    traces: Vec<NetTrace>,
}

impl ForwardPass {
    /// Which hidden ReLU units were active, over all blocks and layers.
    /// The loss is smooth in the weights wherever this pattern is constant.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.traces.iter().flat_map(|t| t.active.iter().flatten().copied()).collect()
    }
}

fn input_scale(x0: &ComplexGrid) -> f64 {
    let n = (x0.dims()[1] * x0.dims()[2]) as f64;
    let s = x0.norm() / n.sqrt();
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

fn check_weights(acq: &Acquisition, weights: &WeightSet) -> Result<()> {
    if acq.mask.shots() != weights.shots {
        return Err(PiddError::ShapeMismatch {
            expected: vec![weights.shots],
            found: vec![acq.mask.shots()],
        });
    }
    Ok(())
}

/// `X^0 = A* Y`; block `k` computes `Z^k = DC(X^{k-1})` and
/// `X^k = s N_k(Z^k / s)` with `s` the root-mean-square of `X^0`.
pub fn pidd_forward(acq: &Acquisition, weights: &WeightSet) -> Result<ForwardPass> {
    check_weights(acq, weights)?;
    let mut x = zero_filled(acq.y, acq.coils, acq.mask)?;
    let (j, ny, nx) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let scale = input_scale(&x);
    let blocks = weights.config.blocks;
    let mut outputs = Vec::with_capacity(blocks);
    let mut traces = Vec::with_capacity(blocks);
    for k in 0..blocks {
        let z = data_consistency(&x, acq.y, acq.coils, acq.mask, UNROLLED_LAMBDA)?;
        let trace = net_forward(weights.block(k), to_channels(&z, 1.0 / scale), ny, nx);
        x = from_channels(&trace.output, j, ny, nx, scale)?.with_roles(z.roles())?;
        outputs.push(x.clone());
        traces.push(trace);
    }
    Ok(ForwardPass { outputs, scale, traces })
}

/// `(1/K) sum_k ||X^k - X_GT||^2` for one sample.
pub fn loss(outputs: &[ComplexGrid], target: &ComplexGrid) -> Result<f64> {
    if outputs.is_empty() {
        return Err(PiddError::InvalidInput("loss needs at least one block output".into()));
    }
    let mut total = 0.0;
    for x in outputs {
        check_shape(target.dims(), x.dims())?;
        total += x.data().iter().zip(target.data()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
    }
    Ok(total / outputs.len() as f64)
}

/// Loss of one sample and its gradient with respect to every parameter,
/// laid out like `weights`.
pub fn backward(
    acq: &Acquisition,
    weights: &WeightSet,
    pass: &ForwardPass,
    target: &ComplexGrid,
) -> Result<(f64, WeightSet)> {
    let value = loss(&pass.outputs, target)?;
    let blocks = pass.outputs.len();
    let (j, ny, nx) = (target.dims()[0], target.dims()[1], target.dims()[2]);
    let mut grads = weights.clone();
    for layer in grads.blocks.iter_mut().flatten() {
        layer.weight.iter_mut().for_each(|v| *v = 0.0);
        layer.bias.iter_mut().for_each(|v| *v = 0.0);
    }
    let weight_scale = 2.0 / blocks as f64;
    let mut carried: Option<ComplexGrid> = None;
    for k in (0..blocks).rev() {
        // dL/dX^k: the direct loss term plus what flows back from block k+1
        let mut g = pass.outputs[k].sub(target)?;
        g.scale(weight_scale);
        if let Some(c) = carried.take() {
            g.axpy(Complex64::new(1.0, 0.0), &c)?;
        }
        let slot = if weights.config.share_weights { 0 } else { k };
        let layer_grads: &mut [ConvLayer] = &mut grads.blocks[slot];
        let gz = net_backward(
            weights.block(k),
            &pass.traces[k],
            to_channels(&g, 1.0),
            ny,
            nx,
            layer_grads,
            pass.scale,
            k > 0,
        );
        if let Some(gz) = gz {
            let gz = from_channels(&gz, j, ny, nx, 1.0)?.with_roles(g.roles())?;
            carried = Some(dc_linear(&gz, acq.coils, acq.mask, UNROLLED_LAMBDA)?);
        }
    }
    Ok((value, grads))
}

/// Final block output and a report.
pub fn pidd_reconstruct(acq: &Acquisition, weights: &WeightSet) -> Result<(ComplexGrid, ReconReport)> {
    let mut pass = pidd_forward(acq, weights)?;
    let x = pass.outputs.pop().expect("at least one block");
    let mut flags = Vec::new();
    if !x.data().iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        return Err(PiddError::Numerical("network output is not finite".into()));
    }
    if acq.mask.pf_rate() < 1.0 {
        flags.push("partial_fourier".into());
    }
    let final_residual = data_residual(&x, acq.y, acq.coils, acq.mask)?;
    Ok((
        x,
        ReconReport {
            method: "pidd".into(),
            iters: weights.config.blocks,
            final_residual,
            flags,
        },
    ))
}

/// Low-rank refinement of a network output for partial-Fourier masks;
/// returns the input unchanged when every phase-encode line is acquired.
pub fn pf_postprocess(x: &ComplexGrid, acq: &Acquisition, cfg: &ReconConfig) -> Result<ComplexGrid> {
    if acq.mask.pf_rate() >= 1.0 {
        return Ok(x.clone());
    }
    lowrank_refine(x, acq.y, acq.coils, acq.mask, cfg)
}
