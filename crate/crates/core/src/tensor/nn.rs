//! Neural-network primitives: softmax, layer norm, activations, convolution.

use super::Tensor;
use crate::error::{CmtaError, Result};

/// Layer-norm variance epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Elementwise functions with a matching backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Relu,
    Exp,
    Log,
    /// tanh approximation.
    Gelu,
    Abs,
    Sqrt,
    Recip,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Relu => "relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Gelu => "gelu",
            Unary::Abs => "abs",
            Unary::Sqrt => "sqrt",
            Unary::Recip => "recip",
        }
    }

    fn check(self, x: f64) -> bool {
        match self {
            Unary::Log => x > 0.0,
            Unary::Sqrt => x >= 0.0,
            Unary::Recip => x != 0.0,
            _ => true,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Relu => x.max(0.0),
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh()),
            Unary::Abs => x.abs(),
            Unary::Sqrt => x.sqrt(),
            Unary::Recip => 1.0 / x,
        }
    }

    /// d f(x) / dx given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Exp => y,
            Unary::Log => 1.0 / x,
            Unary::Gelu => {
                let u = GELU_C * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            // sign convention: zero at zero
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Sqrt => 0.5 / y,
            Unary::Recip => -y * y,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// (outer, len, inner) strides for a reduction along `axis`.
fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(CmtaError::dim("softmax axis", shape, &[axis]));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Calls `f(output, input, kernel)` flat indices for every in-bounds tap of a
/// same-padded depthwise convolution.
fn conv_taps(c: usize, h: usize, w: usize, k: usize, mut f: impl FnMut(usize, usize, usize)) {
    let pad = (k / 2) as isize;
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let o = (ch * h + i) * w + j;
                for a in 0..k {
                    let ii = i as isize + a as isize - pad;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for b in 0..k {
                        let jj = j as isize + b as isize - pad;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        f(o, (ch * h + ii as usize) * w + jj as usize, (ch * k + a) * k + b);
                    }
                }
            }
        }
    }
}

impl Tensor {
    pub fn unary(&self, f: Unary) -> Result<Tensor> {
        if let Some((i, &v)) = self.values().iter().enumerate().find(|(_, &v)| !f.check(v)) {
            return Err(CmtaError::Domain { op: f.name(), index: i, value: v });
        }
        let out: Vec<f64> = self.values().iter().map(|&x| f.apply(x)).collect();
        let y = out.clone();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, ps| {
            let x = ps[0].values();
            vec![Some(g.iter().zip(x.iter().zip(&y)).map(|(g, (&x, &y))| g * f.derivative(x, y)).collect())]
        }))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(Unary::Sigmoid).expect("sigmoid is total")
    }

    pub fn relu(&self) -> Tensor {
        self.unary(Unary::Relu).expect("relu is total")
    }

    pub fn gelu(&self) -> Tensor {
        self.unary(Unary::Gelu).expect("gelu is total")
    }

    pub fn exp(&self) -> Tensor {
        self.unary(Unary::Exp).expect("exp is total")
    }

    pub fn abs(&self) -> Tensor {
        self.unary(Unary::Abs).expect("abs is total")
    }

    /// Natural log; non-positive entries are a domain error.
    pub fn ln(&self) -> Result<Tensor> {
        self.unary(Unary::Log)
    }

    /// Clips into `[lo, hi]`; the gradient is zero where clipping was active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        let out = self.values().iter().map(|v| v.clamp(lo, hi)).collect();
        Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, ps| {
            let x = ps[0].values();
            vec![Some(
                g.iter()
                    .zip(x)
                    .map(|(g, &x)| if (lo..=hi).contains(&x) { *g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    /// Softmax along `axis`, stabilised by max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_layout(self.shape(), axis)?;
        let x = self.values();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let m = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for i in 0..len {
                    let e = (x[at(i)] - m).exp();
                    out[at(i)] = e;
                    z += e;
                }
                for i in 0..len {
                    out[at(i)] /= z;
                }
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut d = vec![0.0; y.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + r;
                    let dot: f64 = (0..len).map(|i| g[at(i)] * y[at(i)]).sum();
                    for i in 0..len {
                        d[at(i)] = y[at(i)] * (g[at(i)] - dot);
                    }
                }
            }
            vec![Some(d)]
        }))
    }

    /// `log(softmax(x))` along `axis`, computed without forming the softmax.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor> {
        let (outer, len, inner) = axis_layout(self.shape(), axis)?;
        let x = self.values();
        let mut out = vec![0.0; x.len()];
        let mut probs = vec![0.0; x.len()];
        for o in 0..outer {
            for r in 0..inner {
                let at = |i: usize| (o * len + i) * inner + r;
                let m = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let lse = m + (0..len).map(|i| (x[at(i)] - m).exp()).sum::<f64>().ln();
                for i in 0..len {
                    out[at(i)] = x[at(i)] - lse;
                    probs[at(i)] = out[at(i)].exp();
                }
            }
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut d = vec![0.0; probs.len()];
            for o in 0..outer {
                for r in 0..inner {
                    let at = |i: usize| (o * len + i) * inner + r;
                    let gs: f64 = (0..len).map(|i| g[at(i)]).sum();
                    for i in 0..len {
                        d[at(i)] = g[at(i)] - probs[at(i)] * gs;
                    }
                }
            }
            vec![Some(d)]
        }))
    }

    /// Row-wise layer norm of an `n×d` tensor followed by `gain`/`bias`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (n, d) = self.dims2()?;
        if gain.numel() != d {
            return Err(CmtaError::dim("layer_norm gain", self.shape(), gain.shape()));
        }
        if bias.numel() != d {
            return Err(CmtaError::dim("layer_norm bias", self.shape(), bias.shape()));
        }
        let x = self.values();
        let (gv, bv) = (gain.values(), bias.values());
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * gv[j] + bv[j];
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![n, d],
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g, ps| {
                let gv = ps[1].values();
                let dx = ps[0].requires_grad().then(|| {
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        let gr = &g[i * d..(i + 1) * d];
                        let hr = &xhat[i * d..(i + 1) * d];
                        let dh: Vec<f64> = gr.iter().zip(gv).map(|(g, w)| g * w).collect();
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[i * d + j] = inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    dx
                });
                let dgain = ps[1].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            acc[j] += g[i * d + j] * xhat[i * d + j];
                        }
                    }
                    acc
                });
                let dbias = ps[2].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for gr in g.chunks(d) {
                        acc.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                    acc
                });
                vec![dx, dgain, dbias]
            },
        ))
    }

    /// Per-channel 2-D convolution of a `c×h×w` input with a `c×k×k` kernel,
    /// stride 1 and zero "same" padding. `k` must be odd.
    pub fn depthwise_conv2d(&self, kernel: &Tensor) -> Result<Tensor> {
        let (c, h, w) = match self.shape() {
            [c, h, w] => (*c, *h, *w),
            s => return Err(CmtaError::dim("depthwise_conv2d input", s, kernel.shape())),
        };
        let k = match kernel.shape() {
            [kc, k1, k2] if *kc == c && k1 == k2 => *k1,
            s => return Err(CmtaError::dim("depthwise_conv2d kernel", self.shape(), s)),
        };
        if k % 2 == 0 {
            return Err(CmtaError::contract(format!("depthwise_conv2d needs an odd kernel size, got {k}")));
        }
        let (x, kv) = (self.values(), kernel.values());
        let mut out = vec![0.0; c * h * w];
        conv_taps(c, h, w, k, |o, xi, ki| out[o] += kv[ki] * x[xi]);
        Ok(Tensor::from_op(out, vec![c, h, w], vec![self.clone(), kernel.clone()], move |g, ps| {
            let (x, kv) = (ps[0].values(), ps[1].values());
            let dx = ps[0].requires_grad().then(|| {
                let mut d = vec![0.0; x.len()];
                conv_taps(c, h, w, k, |o, xi, ki| d[xi] += kv[ki] * g[o]);
                d
            });
            let dk = ps[1].requires_grad().then(|| {
                let mut d = vec![0.0; kv.len()];
                conv_taps(c, h, w, k, |o, xi, ki| d[ki] += x[xi] * g[o]);
                d
            });
            vec![dx, dk]
        }))
    }
}
