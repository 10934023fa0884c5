//! Small classical layers with hand-written backward passes, plus Adam.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }
}

/// `y = W x + b` with `W` stored `[out][in]` row-major.
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let (n_in, n_out) = (x.len(), b.len());
    if w.len() != n_in * n_out {
        return Err(Error::shape(format!(
            "dense weights hold {} values, expected {n_out}x{n_in}",
            w.len()
        )));
    }
    Ok(b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            bias + w[o * n_in..(o + 1) * n_in]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn dense_backward(x: &[f64], w: &[f64], dy: &[f64]) -> Result<DenseGrads> {
    let (n_in, n_out) = (x.len(), dy.len());
    if w.len() != n_in * n_out {
        return Err(Error::shape("dense weights do not match x and dy"));
    }
    let mut dx = vec![0.0; n_in];
    let mut dw = vec![0.0; n_in * n_out];
    for (o, &g) in dy.iter().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let drow = &mut dw[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            dx[i] += row[i] * g;
            drow[i] = x[i] * g;
        }
    }
    Ok(DenseGrads {
        dx,
        dw,
        db: dy.to_vec(),
    })
}

/// Single-channel valid cross-correlation with `F` square filters, bias and
/// ReLU. Input `[H, W]`, filters `[F, k, k]`, output `[F, H', W']`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv2d {
    pub fn out_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::config("kernel and stride must be positive"));
        }
        if self.kernel > h || self.kernel > w {
            return Err(Error::shape(format!(
                "{k}x{k} kernel larger than {h}x{w} input",
                k = self.kernel
            )));
        }
        Ok(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }

    pub fn weight_len(&self) -> usize {
        self.filters * self.kernel * self.kernel
    }

    pub fn forward(&self, x: &Tensor, weights: &[f64], bias: &[f64]) -> Result<Tensor> {
        let (h, w) = image_dims(x)?;
        let (oh, ow) = self.out_dims(h, w)?;
        self.check_params(weights, bias)?;
        let k = self.kernel;
        let mut out = vec![0.0; self.filters * oh * ow];
        for f in 0..self.filters {
            let filt = &weights[f * k * k..(f + 1) * k * k];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[f];
                    for ky in 0..k {
                        let row = (oy * self.stride + ky) * w + ox * self.stride;
                        for kx in 0..k {
                            acc += filt[ky * k + kx] * x.data[row + kx];
                        }
                    }
                    out[(f * oh + oy) * ow + ox] = acc.max(0.0);
                }
            }
        }
        Tensor::new(vec![self.filters, oh, ow], out)
    }

    /// Gradients w.r.t. filters, bias and input, given the forward output (for
    /// the ReLU mask) and the gradient of the loss w.r.t. that output.
    pub fn backward(&self, x: &Tensor, weights: &[f64], out: &Tensor, dout: &[f64]) -> Result<ConvGrads> {
        let (h, w) = image_dims(x)?;
        let (oh, ow) = self.out_dims(h, w)?;
        if out.len() != dout.len() || out.len() != self.filters * oh * ow {
            return Err(Error::shape("conv output gradient has the wrong size"));
        }
        let k = self.kernel;
        let mut dw = vec![0.0; self.weight_len()];
        let mut db = vec![0.0; self.filters];
        let mut dx = vec![0.0; h * w];
        for f in 0..self.filters {
            for oy in 0..oh {
                for ox in 0..ow {
                    let idx = (f * oh + oy) * ow + ox;
                    if out.data[idx] <= 0.0 {
                        continue;
                    }
                    let g = dout[idx];
                    db[f] += g;
                    for ky in 0..k {
                        let row = (oy * self.stride + ky) * w + ox * self.stride;
                        for kx in 0..k {
                            dw[f * k * k + ky * k + kx] += g * x.data[row + kx];
                            dx[row + kx] += g * weights[f * k * k + ky * k + kx];
                        }
                    }
                }
            }
        }
        Ok(ConvGrads { dw, db, dx })
    }

    fn check_params(&self, weights: &[f64], bias: &[f64]) -> Result<()> {
        if weights.len() != self.weight_len() || bias.len() != self.filters {
            return Err(Error::shape(format!(
                "conv expects {} weights and {} biases, got {} and {}",
                self.weight_len(),
                self.filters,
                weights.len(),
                bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
    pub dx: Vec<f64>,
}

fn image_dims(x: &Tensor) -> Result<(usize, usize)> {
    match x.shape() {
        [h, w] => Ok((*h, *w)),
        other => Err(Error::shape(format!("expected a 2-D image, got shape {other:?}"))),
    }
}

/// Per-channel mean of `[F, H, W]`.
pub fn avgpool_global(x: &Tensor) -> Result<Vec<f64>> {
    let (f, cells) = match x.shape() {
        [f, h, w] => (*f, h * w),
        other => return Err(Error::shape(format!("expected [F, H, W], got {other:?}"))),
    };
    Ok((0..f)
        .map(|c| x.data[c * cells..(c + 1) * cells].iter().sum::<f64>() / cells as f64)
        .collect())
}

/// Spread each channel gradient evenly over its `cells` positions.
pub fn avgpool_global_backward(dy: &[f64], cells: usize) -> Vec<f64> {
    dy.iter()
        .flat_map(|&g| std::iter::repeat_n(g / cells as f64, cells))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, and its gradient.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::shape("softmax needs at least two classes"));
    }
    if label >= logits.len() {
        return Err(Error::shape(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = -(logits[label] - max - log_total);
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// `θ -= lr · m̂ / (√v̂ + ε)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "Adam state tracks {} parameters, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Glorot-uniform draw in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut SplitMix64, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.uniform(-limit, limit)).collect()
}
