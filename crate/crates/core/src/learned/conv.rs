//! Real-valued 2-D convolution with zero "same" padding.

use serde::{Deserialize, Serialize};

/// `c_out x c_in x k x k` kernel plus one bias per output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    /// Index `((o * c_in + i) * k + dy) * k + dx`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(c_out: usize, c_in: usize, k: usize) -> Self {
        ConvLayer {
            c_out,
            c_in,
            k,
            weight: vec![0.0; c_out * c_in * k * k],
            bias: vec![0.0; c_out],
        }
    }

    pub fn w_index(&self, o: usize, i: usize, dy: usize, dx: usize) -> usize {
        ((o * self.c_in + i) * self.k + dy) * self.k + dx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn pad(&self) -> usize {
        self.k / 2
    }
}

/// Copy `c` planes of `h x w` into a zero border of width `p`.
pub(crate) fn pad_planes(x: &[f64], c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let mut out = vec![0.0; c * ph * pw];
    for ci in 0..c {
        for y in 0..h {
            let src = &x[(ci * h + y) * w..(ci * h + y + 1) * w];
            let dst = ci * ph * pw + (y + p) * pw + p;
            out[dst..dst + w].copy_from_slice(src);
        }
    }
    out
}

/// `out[o] = b[o] + sum_i w[o, i] (*) x[i]` (cross-correlation).
pub fn conv_forward(layer: &ConvLayer, x: &[f64], h: usize, w: usize) -> Vec<f64> {
    conv_apply(layer, &pad_planes(x, layer.c_in, h, w, layer.pad()), h, w, true)
}

pub(crate) fn conv_apply(layer: &ConvLayer, padded: &[f64], h: usize, w: usize, with_bias: bool) -> Vec<f64> {
    let (k, p) = (layer.k, layer.pad());
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let hw = h * w;
    let mut out = vec![0.0; layer.c_out * hw];
    for o in 0..layer.c_out {
        let dst = &mut out[o * hw..(o + 1) * hw];
        if with_bias {
            dst.iter_mut().for_each(|d| *d = layer.bias[o]);
        }
        for i in 0..layer.c_in {
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = layer.weight[layer.w_index(o, i, dy, dx)];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let row = &src[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                        for (d, s) in dst[y * w..(y + 1) * w].iter_mut().zip(row) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of one layer given the padded input and the output gradient.
/// Accumulates into `grad` (same shapes as `layer`) and returns the input
/// gradient when `need_input` is set.
pub(crate) fn conv_backward(
    layer: &ConvLayer,
    padded: &[f64],
    grad_out: &[f64],
    h: usize,
    w: usize,
    grad: &mut ConvLayer,
    need_input: bool,
) -> Option<Vec<f64>> {
    let (k, p) = (layer.k, layer.pad());
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    let hw = h * w;
    let mut grad_pad = if need_input {
        vec![0.0; layer.c_in * ph * pw]
    } else {
        Vec::new()
    };
    for o in 0..layer.c_out {
        let g = &grad_out[o * hw..(o + 1) * hw];
        grad.bias[o] += g.iter().sum::<f64>();
        for i in 0..layer.c_in {
            let src = &padded[i * ph * pw..(i + 1) * ph * pw];
            for dy in 0..k {
                for dx in 0..k {
                    let idx = layer.w_index(o, i, dy, dx);
                    let mut acc = 0.0;
                    for y in 0..h {
                        let row = &src[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                        acc += g[y * w..(y + 1) * w].iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grad.weight[idx] += acc;
                    if need_input {
                        let wv = layer.weight[idx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dst = &mut grad_pad[i * ph * pw..(i + 1) * ph * pw];
                        for y in 0..h {
                            let row = &mut dst[(y + dy) * pw + dx..(y + dy) * pw + dx + w];
                            for (d, s) in row.iter_mut().zip(&g[y * w..(y + 1) * w]) {
                                *d += wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    if !need_input {
        return None;
    }
    let mut grad_in = vec![0.0; layer.c_in * hw];
    for i in 0..layer.c_in {
        for y in 0..h {
            let src = i * ph * pw + (y + p) * pw + p;
            grad_in[(i * h + y) * w..(i * h + y + 1) * w].copy_from_slice(&grad_pad[src..src + w]);
        }
    }
    Some(grad_in)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(c_out: usize, c_in: usize, k: usize, rng: &mut ChaCha8Rng) -> ConvLayer {
        let mut l = ConvLayer::zeros(c_out, c_in, k);
        l.weight.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        l.bias.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        l
    }

    /// Direct definition with explicit bounds checks.
    fn reference(layer: &ConvLayer, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let p = (layer.k / 2) as isize;
        let mut out = vec![0.0; layer.c_out * h * w];
        for o in 0..layer.c_out {
            for y in 0..h as isize {
                for xx in 0..w as isize {
                    let mut acc = layer.bias[o];
                    for i in 0..layer.c_in {
                        for dy in 0..layer.k as isize {
                            for dx in 0..layer.k as isize {
                                let (sy, sx) = (y + dy - p, xx + dx - p);
                                if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                                    acc += layer.weight[layer.w_index(o, i, dy as usize, dx as usize)]
                                        * x[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    out[(o * h + y as usize) * w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for &(k, h, w) in &[(3usize, 5usize, 7usize), (5, 6, 4), (1, 3, 3)] {
            let layer = random_layer(3, 2, k, &mut rng);
            let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = conv_forward(&layer, &x, h, w);
            for (a, b) in fast.iter().zip(reference(&layer, &x, h, w)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, w) = (6, 5);
        let layer = random_layer(3, 2, 3, &mut rng);
        let x: Vec<f64> = (0..2 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..3 * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let padded = pad_planes(&x, 2, h, w, 1);
        let mut grad = ConvLayer::zeros(3, 2, 3);
        let gi = conv_backward(&layer, &padded, &g, h, w, &mut grad, true).unwrap();
        // <conv_nobias(x), g> = <x, grad_in>
        let y = conv_apply(&layer, &padded, h, w, false);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&gi).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
        // <conv(x; w), g> is linear in w: its weight gradient reproduces it
        let lw: f64 = layer.weight.iter().zip(&grad.weight).map(|(a, b)| a * b).sum();
        assert!((lhs - lw).abs() < 1e-10);
        assert!((grad.bias[0] - g[..h * w].iter().sum::<f64>()).abs() < 1e-12);
    }
}
