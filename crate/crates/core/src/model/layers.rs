//! Dense and strided-convolution primitives over a flat parameter buffer.

use serde::{Deserialize, Serialize};

/// Offsets of a fully-connected layer inside the flat parameter vector.
/// Weights are `out x inp`, row-major, followed by `out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub offset: usize,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn param_count(inp: usize, out: usize) -> usize {
        inp * out + out
    }

    pub fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.inp * self.out]
    }

    pub fn bias<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.inp * self.out;
        &params[start..start + self.out]
    }

    pub fn end(&self) -> usize {
        self.offset + Self::param_count(self.inp, self.out)
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inp);
        let w = self.weights(params);
        self.bias(params)
            .iter()
            .enumerate()
            .map(|(o, b)| {
                let row = &w[o * self.inp..(o + 1) * self.inp];
                b + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, params: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let w = self.weights(params);
        let mut gx = vec![0.0; self.inp];
        let (gw, gb) = grad[self.offset..self.end()].split_at_mut(self.inp * self.out);
        for (o, &g) in gy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[o * self.inp..(o + 1) * self.inp];
            let grow = &mut gw[o * self.inp..(o + 1) * self.inp];
            for i in 0..self.inp {
                grow[i] += g * x[i];
                gx[i] += g * row[i];
            }
            gb[o] += g;
        }
        gx
    }
}

pub const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

/// 3x3 convolution, stride 2, zero padding 1. Tensors are channel-major
/// `c x h x w`. Weights are `out_c x in_c x 3 x 3` followed by `out_c` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub offset: usize,
    pub in_c: usize,
    pub out_c: usize,
    pub in_h: usize,
    pub in_w: usize,
}

impl Conv2d {
    pub fn param_count(in_c: usize, out_c: usize) -> usize {
        out_c * in_c * KERNEL * KERNEL + out_c
    }

    pub fn output_size(n: usize) -> usize {
        (n + 2 * PAD - KERNEL) / STRIDE + 1
    }

    pub fn out_h(&self) -> usize {
        Self::output_size(self.in_h)
    }

    pub fn out_w(&self) -> usize {
        Self::output_size(self.in_w)
    }

    pub fn end(&self) -> usize {
        self.offset + Self::param_count(self.in_c, self.out_c)
    }

    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        self.offset + ((oc * self.in_c + ic) * KERNEL + ky) * KERNEL + kx
    }

    fn bias_index(&self, oc: usize) -> usize {
        self.offset + self.out_c * self.in_c * KERNEL * KERNEL + oc
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    fn tap(o: usize, k: usize, limit: usize) -> Option<usize> {
        (o * STRIDE + k).checked_sub(PAD).filter(|&v| v < limit)
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plane = self.in_h * self.in_w;
        let mut out = vec![0.0; self.out_c * oh * ow];
        for oc in 0..self.out_c {
            let b = params[self.bias_index(oc)];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for ic in 0..self.in_c {
                        for ky in 0..KERNEL {
                            let Some(iy) = Self::tap(oy, ky, self.in_h) else {
                                continue;
                            };
                            for kx in 0..KERNEL {
                                let Some(ix) = Self::tap(ox, kx, self.in_w) else {
                                    continue;
                                };
                                acc += params[self.weight_index(oc, ic, ky, kx)]
                                    * x[ic * plane + iy * self.in_w + ix];
                            }
                        }
                    }
                    out[(oc * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    pub fn backward(&self, params: &[f64], x: &[f64], gy: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (oh, ow) = (self.out_h(), self.out_w());
        let plane = self.in_h * self.in_w;
        let mut gx = vec![0.0; x.len()];
        for oc in 0..self.out_c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gy[(oc * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    grad[self.bias_index(oc)] += g;
                    for ic in 0..self.in_c {
                        for ky in 0..KERNEL {
                            let Some(iy) = Self::tap(oy, ky, self.in_h) else {
                                continue;
                            };
                            for kx in 0..KERNEL {
                                let Some(ix) = Self::tap(ox, kx, self.in_w) else {
                                    continue;
                                };
                                let wi = self.weight_index(oc, ic, ky, kx);
                                let xi = ic * plane + iy * self.in_w + ix;
                                grad[wi] += g * x[xi];
                                gx[xi] += g * params[wi];
                            }
                        }
                    }
                }
            }
        }
        gx
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn relu_backward(pre: &[f64], gy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(gy)
        .map(|(p, g)| if *p > 0.0 { *g } else { 0.0 })
        .collect()
}

/// Global max over each channel plane; returns pooled values and argmax
/// positions (first maximum on ties).
pub fn global_max_pool(x: &[f64], channels: usize) -> (Vec<f64>, Vec<usize>) {
    let plane = x.len() / channels;
    (0..channels)
        .map(|c| {
            let slice = &x[c * plane..(c + 1) * plane];
            let mut best = 0;
            for (i, v) in slice.iter().enumerate() {
                if *v > slice[best] {
                    best = i;
                }
            }
            (slice[best], c * plane + best)
        })
        .unzip()
}
