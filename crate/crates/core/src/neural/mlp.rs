//! Dense layers with hand-written forward and backward passes.
//!
//! Each layer stores `Wᵀ` (`fan_in × fan_out`, row-major) followed by its
//! bias, so both passes run over contiguous rows.

use super::Activation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of `Wᵀ` in the flat parameter vector.
    pub w: usize,
    /// Offset of the bias.
    pub b: usize,
    /// Offset of this layer's pre-activations in a forward cache.
    pub z: usize,
    /// Offset of this layer's input in a forward cache.
    pub h_in: usize,
}

/// Parameter and cache layout of an MLP with a bounded final squashing.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub cap: f64,
    pub n_params: usize,
    /// Length of one forward cache: input, then `(z, h)` per hidden layer,
    /// then the output pre-activation.
    pub cache_len: usize,
    pub max_width: usize,
}

impl Mlp {
    pub fn new(widths: &[usize], activation: Activation, cap: f64) -> Self {
        let mut layers = Vec::with_capacity(widths.len() - 1);
        let mut p = 0;
        let mut c = widths[0];
        let mut h_in = 0;
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let layer = Layer {
                fan_in,
                fan_out,
                w: p,
                b: p + fan_in * fan_out,
                z: c,
                h_in,
            };
            p += fan_in * fan_out + fan_out;
            h_in = c + fan_out;
            c += 2 * fan_out;
            layers.push(layer);
        }
        // the output layer needs no post-activation slot
        let cache_len = c - widths[widths.len() - 1];
        Self {
            layers,
            activation,
            cap,
            n_params: p,
            cache_len,
            max_width: *widths.iter().max().unwrap(),
        }
    }

    /// Evaluates the network on `cache[..input_dim]`, filling the rest of the
    /// cache and writing the squashed output.
    pub fn forward(&self, params: &[f64], cache: &mut [f64], out: &mut [f64]) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = cache.split_at_mut(layer.z);
            let h = &head[layer.h_in..layer.h_in + layer.fan_in];
            let z = &mut tail[..layer.fan_out];
            z.copy_from_slice(&params[layer.b..layer.b + layer.fan_out]);
            let wt = &params[layer.w..layer.b];
            for (hj, row) in h.iter().zip(wt.chunks_exact(layer.fan_out)) {
                for (zi, w) in z.iter_mut().zip(row) {
                    *zi += hj * w;
                }
            }
            if l < last {
                let (z, a) = tail.split_at_mut(layer.fan_out);
                let a = &mut a[..layer.fan_out];
                match self.activation {
                    Activation::Tanh => {
                        for (ai, zi) in a.iter_mut().zip(z.iter()) {
                            *ai = zi.tanh();
                        }
                    }
                    Activation::LipSwish => {
                        for (ai, zi) in a.iter_mut().zip(z.iter()) {
                            *ai = lipswish(*zi);
                        }
                    }
                }
            } else {
                for (o, zi) in out.iter_mut().zip(z.iter()) {
                    *o = self.cap * (zi / self.cap).tanh();
                }
            }
        }
    }

    /// Accumulates `∂(g_outᵀ out)/∂params` into `grad` and writes the input
    /// gradient into `g_input`. `delta` and `delta_prev` need `max_width`
    /// entries.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f64],
        cache: &[f64],
        g_out: &[f64],
        grad: &mut [f64],
        g_input: &mut [f64],
        delta: &mut Vec<f64>,
        delta_prev: &mut Vec<f64>,
    ) {
        let last = self.layers[self.layers.len() - 1];
        delta.clear();
        for (k, g) in g_out.iter().enumerate() {
            let s = (cache[last.z + k] / self.cap).tanh();
            delta.push(g * (1.0 - s * s));
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = &cache[layer.h_in..layer.h_in + layer.fan_in];
            for (gb, d) in grad[layer.b..layer.b + layer.fan_out].iter_mut().zip(delta.iter()) {
                *gb += d;
            }
            let wt = &params[layer.w..layer.b];
            let gwt = &mut grad[layer.w..layer.b];
            for (hj, grow) in h.iter().zip(gwt.chunks_exact_mut(layer.fan_out)) {
                for (g, d) in grow.iter_mut().zip(delta.iter()) {
                    *g += hj * d;
                }
            }
            let back = |j: usize| dot(&wt[j * layer.fan_out..(j + 1) * layer.fan_out], delta);
            if l == 0 {
                for (j, gi) in g_input.iter_mut().enumerate() {
                    *gi = back(j);
                }
            } else {
                let prev = self.layers[l - 1];
                delta_prev.clear();
                for j in 0..layer.fan_in {
                    let z = cache[prev.z + j];
                    let slope = match self.activation {
                        Activation::Tanh => 1.0 - h[j] * h[j],
                        Activation::LipSwish => lipswish_slope(z),
                    };
                    delta_prev.push(back(j) * slope);
                }
                std::mem::swap(delta, delta_prev);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `z · sigmoid(z) / 1.1`.
#[inline]
pub fn lipswish(z: f64) -> f64 {
    z * sigmoid(z) / 1.1
}

#[inline]
fn lipswish_slope(z: f64) -> f64 {
    let s = sigmoid(z);
    (s + z * s * (1.0 - s)) / 1.1
}
