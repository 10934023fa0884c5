//! The two hybrid models (quanvolutional QuanNN and QCNN), their hybrid
//! backward passes, training loop and checkpoint format.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    angle_embed_slots, basic_entangling_layers, evaluate, instrument_noise, qcnn_pool_block,
    strongly_entangling_layers, CircuitIR, Readout,
};
use crate::data::LabeledImageSet;
use crate::error::{Error, Result};
use crate::grad::param_shift_jacobian;
use crate::nn::{
    argmax, avgpool_global, avgpool_global_backward, dense_backward, dense_forward, glorot_uniform, sigmoid,
    softmax_xent, AdamState, Conv2d, Tensor,
};
use crate::noise::NoiseSpec;
use crate::rng::SplitMix64;

pub const N_QUBITS: usize = 4;
pub const N_CLASSES: usize = 4;
pub const FILTER_LAYERS: usize = 3;
pub const QCNN_LAYERS: usize = 3;
pub const POOL_PAIRS: [(usize, usize); 2] = [(0, 1), (2, 3)];
pub const QCNN_READOUT_WIRES: [usize; 2] = [0, 2];
const FRONTEND: Conv2d = Conv2d {
    filters: 4,
    kernel: 5,
    stride: 2,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Quannn,
    Qcnn,
}

impl ModelKind {
    pub fn token(self) -> &'static str {
        match self {
            ModelKind::Quannn => "quannn",
            ModelKind::Qcnn => "qcnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quannn" => Ok(ModelKind::Quannn),
            "qcnn" => Ok(ModelKind::Qcnn),
            other => Err(Error::config(format!(
                "unknown model `{other}` (expected quannn or qcnn)"
            ))),
        }
    }
}

/// Flat parameter vector with named, contiguous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    slices: Vec<(String, usize, usize)>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new(layout: &[(&str, usize)]) -> Self {
        let mut slices = Vec::with_capacity(layout.len());
        let mut start = 0;
        for &(name, len) in layout {
            slices.push((name.to_string(), start, start + len));
            start += len;
        }
        Self {
            slices,
            values: vec![0.0; start],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(name, start, end)` per slice, in storage order.
    pub fn slices(&self) -> &[(String, usize, usize)] {
        &self.slices
    }

    pub fn range(&self, name: &str) -> Result<std::ops::Range<usize>> {
        self.slices
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, a, b)| *a..*b)
            .ok_or_else(|| Error::config(format!("no parameter slice named `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        let r = self.range(name)?;
        Ok(&self.values[r])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut [f64]> {
        let r = self.range(name)?;
        Ok(&mut self.values[r])
    }

    fn slice(&self, name: &str) -> &[f64] {
        self.get(name).expect("model layout names are fixed")
    }

    fn grad_slice<'a>(&self, grad: &'a mut [f64], name: &str) -> &'a mut [f64] {
        &mut grad[self.range(name).expect("model layout names are fixed")]
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

/// Sum of per-sample losses and gradients over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub loss_sum: f64,
    pub correct: usize,
    pub grad_sum: Vec<f64>,
}

fn check_image(image: &[f64], h: usize, w: usize) -> Result<()> {
    if image.len() != h * w {
        return Err(Error::shape(format!(
            "image has {} pixels, model expects {h}x{w}",
            image.len()
        )));
    }
    Ok(())
}

fn check_label(label: u8) -> Result<usize> {
    let l = label as usize;
    if l >= N_CLASSES {
        return Err(Error::shape(format!("label {label} outside the {N_CLASSES} classes")));
    }
    Ok(l)
}

// ---------------------------------------------------------------- QuanNN

/// Noise-instrumented 2×2 filter: RY encoding on slots 0..4, then the basic
/// entangling layers on slots 4..16, read out as per-wire ⟨Z⟩.
pub fn filter_circuit(noise: &NoiseSpec) -> Result<CircuitIR> {
    let mut c = angle_embed_slots(N_QUBITS)?;
    c.append(basic_entangling_layers(N_QUBITS, FILTER_LAYERS)?)?;
    instrument_noise(&c, noise)
}

type PatchKey = [u64; 4];

fn patch_at(image: &[f64], width: usize, py: usize, px: usize) -> [f64; 4] {
    let (r0, r1) = (2 * py * width + 2 * px, (2 * py + 1) * width + 2 * px);
    [image[r0], image[r0 + 1], image[r1], image[r1 + 1]]
}

fn patch_key(p: &[f64; 4]) -> PatchKey {
    p.map(f64::to_bits)
}

fn filter_params(patch: &[f64; 4], qparams: &[f64]) -> Vec<f64> {
    patch.iter().map(|x| PI * x).chain(qparams.iter().copied()).collect()
}

/// Distinct patches across a set of images, in first-seen order, plus the
/// index of each image's patches into that list.
struct PatchTable {
    patches: Vec<[f64; 4]>,
    index: Vec<Vec<usize>>,
}

impl PatchTable {
    fn build(images: &[&[f64]], h: usize, w: usize) -> Result<Self> {
        if !h.is_multiple_of(2) || !w.is_multiple_of(2) || h == 0 || w == 0 {
            return Err(Error::shape(format!("quanvolution needs even image dims, got {h}x{w}")));
        }
        let mut seen: HashMap<PatchKey, usize> = HashMap::new();
        let mut patches = Vec::new();
        let mut index = Vec::with_capacity(images.len());
        for img in images {
            check_image(img, h, w)?;
            let mut ids = Vec::with_capacity(h * w / 4);
            for py in 0..h / 2 {
                for px in 0..w / 2 {
                    let p = patch_at(img, w, py, px);
                    let id = *seen.entry(patch_key(&p)).or_insert_with(|| {
                        patches.push(p);
                        patches.len() - 1
                    });
                    ids.push(id);
                }
            }
            index.push(ids);
        }
        Ok(Self { patches, index })
    }

    fn features(&self, values: &[Vec<f64>], sample: usize) -> Vec<f64> {
        let ids = &self.index[sample];
        let cells = ids.len();
        let mut out = vec![0.0; N_QUBITS * cells];
        for (cell, &id) in ids.iter().enumerate() {
            for ch in 0..N_QUBITS {
                out[ch * cells + cell] = values[id][ch];
            }
        }
        out
    }
}

fn filter_values(c: &CircuitIR, patches: &[[f64; 4]], qparams: &[f64]) -> Result<Vec<Vec<f64>>> {
    patches
        .par_iter()
        .map(|p| evaluate(c, &filter_params(p, qparams), &Readout::ExpectZ))
        .collect()
}

/// Run `c` (a filter circuit with 4 encoding slots) over every
/// non-overlapping 2×2 patch: output `[4, H/2, W/2]`.
pub fn quanvolve_with(c: &CircuitIR, image: &Tensor, qparams: &[f64]) -> Result<Tensor> {
    let (h, w) = match image.shape() {
        [h, w] => (*h, *w),
        other => return Err(Error::shape(format!("expected a 2-D image, got {other:?}"))),
    };
    let table = PatchTable::build(&[image.data()], h, w)?;
    let values = filter_values(c, &table.patches, qparams)?;
    Tensor::new(vec![N_QUBITS, h / 2, w / 2], table.features(&values, 0))
}

pub fn quanvolve(image: &Tensor, qparams: &[f64], noise: &NoiseSpec) -> Result<Tensor> {
    quanvolve_with(&filter_circuit(noise)?, image, qparams)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuanNNModel {
    height: usize,
    width: usize,
    params: ParamStore,
}

impl QuanNNModel {
    pub const N_QPARAMS: usize = N_QUBITS * FILTER_LAYERS;

    /// Zero-initialised model for `height × width` inputs.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if !height.is_multiple_of(2) || !width.is_multiple_of(2) || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "QuanNN needs even image dims, got {height}x{width}"
            )));
        }
        let features = N_QUBITS * (height / 2) * (width / 2);
        Ok(Self {
            height,
            width,
            params: ParamStore::new(&[
                ("qfilter", Self::N_QPARAMS),
                ("head.w", N_CLASSES * features),
                ("head.b", N_CLASSES),
            ]),
        })
    }

    pub fn new(height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        let mut rng = SplitMix64::new(seed);
        let features = m.feature_len();
        let q: Vec<f64> = (0..Self::N_QPARAMS).map(|_| rng.uniform(0.0, TAU)).collect();
        m.params.get_mut("qfilter")?.copy_from_slice(&q);
        let w = glorot_uniform(&mut rng, N_CLASSES * features, features, N_CLASSES);
        m.params.get_mut("head.w")?.copy_from_slice(&w);
        Ok(m)
    }

    pub fn feature_len(&self) -> usize {
        N_QUBITS * (self.height / 2) * (self.width / 2)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn head(&self, features: &[f64]) -> Result<Vec<f64>> {
        dense_forward(features, self.params.slice("head.w"), self.params.slice("head.b"))
    }

    pub fn forward(&self, image: &Tensor, noise: &NoiseSpec) -> Result<Vec<f64>> {
        Ok(self.predict_logits(&[image.data()], noise)?.remove(0))
    }

    pub fn predict_logits(&self, images: &[&[f64]], noise: &NoiseSpec) -> Result<Vec<Vec<f64>>> {
        let c = filter_circuit(noise)?;
        let table = PatchTable::build(images, self.height, self.width)?;
        let values = filter_values(&c, &table.patches, self.params.slice("qfilter"))?;
        (0..images.len())
            .map(|i| self.head(&table.features(&values, i)))
            .collect()
    }

    /// Summed loss and gradient over a batch. Each distinct patch is
    /// differentiated once; its upstream gradient is the sum over every
    /// position (in every image) where it occurs.
    pub fn batch_grad(&self, images: &[&[f64]], labels: &[u8], noise: &NoiseSpec) -> Result<BatchGrad> {
        let c = filter_circuit(noise)?;
        let table = PatchTable::build(images, self.height, self.width)?;
        let qparams = self.params.slice("qfilter");
        let slots: Vec<usize> = (N_QUBITS..N_QUBITS + Self::N_QPARAMS).collect();
        let jacobians = table
            .patches
            .par_iter()
            .map(|p| param_shift_jacobian(&c, &filter_params(p, qparams), &Readout::ExpectZ, &slots))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<Vec<f64>> = jacobians.iter().map(|j| j.value.clone()).collect();

        let mut grad = vec![0.0; self.params.len()];
        let mut upstream = vec![[0.0; N_QUBITS]; table.patches.len()];
        let (mut loss_sum, mut correct) = (0.0, 0);
        for (i, &label) in labels.iter().enumerate() {
            let label = check_label(label)?;
            let features = table.features(&values, i);
            let logits = self.head(&features)?;
            let (loss, dlogits) = softmax_xent(&logits, label)?;
            loss_sum += loss;
            correct += usize::from(argmax(&logits) == label);
            let g = dense_backward(&features, self.params.slice("head.w"), &dlogits)?;
            add_into(self.params.grad_slice(&mut grad, "head.w"), &g.dw);
            add_into(self.params.grad_slice(&mut grad, "head.b"), &g.db);
            let cells = table.index[i].len();
            for (cell, &id) in table.index[i].iter().enumerate() {
                for (ch, u) in upstream[id].iter_mut().enumerate() {
                    *u += g.dx[ch * cells + cell];
                }
            }
        }
        let qgrad = self.params.grad_slice(&mut grad, "qfilter");
        for (jac, up) in jacobians.iter().zip(&upstream) {
            for (k, dk) in jac.grads.iter().enumerate() {
                qgrad[k] += dk.iter().zip(up).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(BatchGrad {
            loss_sum,
            correct,
            grad_sum: grad,
        })
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

// ---------------------------------------------------------------- QCNN

/// Noise-instrumented QCNN circuit: RY encoding on slots 0..4, strongly
/// entangling layers on 4..40, pooling on 40..46.
pub fn qcnn_circuit(noise: &NoiseSpec) -> Result<CircuitIR> {
    let mut c = angle_embed_slots(N_QUBITS)?;
    c.append(strongly_entangling_layers(N_QUBITS, QCNN_LAYERS)?)?;
    c.append(qcnn_pool_block(N_QUBITS, &POOL_PAIRS)?)?;
    instrument_noise(&c, noise)
}

pub fn qcnn_readout() -> Readout {
    Readout::JointProbs(QCNN_READOUT_WIRES.to_vec())
}

/// Intermediate values of the classical frontend.
struct Frontend {
    image: Tensor,
    conv_out: Tensor,
    pooled: Vec<f64>,
    sig: Vec<f64>,
}

impl Frontend {
    fn angles(&self) -> Vec<f64> {
        self.sig.iter().map(|s| PI * s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QCNNModel {
    height: usize,
    width: usize,
    params: ParamStore,
}

impl QCNNModel {
    pub const N_QCONV: usize = 3 * N_QUBITS * QCNN_LAYERS;
    pub const N_QPOOL: usize = 3 * POOL_PAIRS.len();

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        FRONTEND.out_dims(height, width)?;
        Ok(Self {
            height,
            width,
            params: ParamStore::new(&[
                ("conv.w", FRONTEND.weight_len()),
                ("conv.b", FRONTEND.filters),
                ("affine.w", N_QUBITS * FRONTEND.filters),
                ("affine.b", N_QUBITS),
                ("qconv", Self::N_QCONV),
                ("qpool", Self::N_QPOOL),
                ("head.w", N_CLASSES * N_CLASSES),
                ("head.b", N_CLASSES),
            ]),
        })
    }

    pub fn new(height: usize, width: usize, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(height, width)?;
        let mut rng = SplitMix64::new(seed);
        let k2 = FRONTEND.kernel * FRONTEND.kernel;
        let conv = glorot_uniform(&mut rng, FRONTEND.weight_len(), k2, FRONTEND.filters * k2);
        m.params.get_mut("conv.w")?.copy_from_slice(&conv);
        let affine = glorot_uniform(&mut rng, N_QUBITS * FRONTEND.filters, FRONTEND.filters, N_QUBITS);
        m.params.get_mut("affine.w")?.copy_from_slice(&affine);
        for name in ["qconv", "qpool"] {
            for v in m.params.get_mut(name)? {
                *v = rng.uniform(0.0, TAU);
            }
        }
        let head = glorot_uniform(&mut rng, N_CLASSES * N_CLASSES, N_CLASSES, N_CLASSES);
        m.params.get_mut("head.w")?.copy_from_slice(&head);
        Ok(m)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn quantum_params(&self) -> impl Iterator<Item = f64> + '_ {
        self.params
            .slice("qconv")
            .iter()
            .chain(self.params.slice("qpool"))
            .copied()
    }

    fn circuit_params(&self, angles: &[f64]) -> Vec<f64> {
        angles.iter().copied().chain(self.quantum_params()).collect()
    }

    fn frontend(&self, image: &[f64]) -> Result<Frontend> {
        check_image(image, self.height, self.width)?;
        let image = Tensor::new(vec![self.height, self.width], image.to_vec())?;
        let conv_out = FRONTEND.forward(&image, self.params.slice("conv.w"), self.params.slice("conv.b"))?;
        let pooled = avgpool_global(&conv_out)?;
        let z = dense_forward(&pooled, self.params.slice("affine.w"), self.params.slice("affine.b"))?;
        let sig = z.into_iter().map(sigmoid).collect();
        Ok(Frontend {
            image,
            conv_out,
            pooled,
            sig,
        })
    }

    /// The four encoding angles, each in `[0, π]`.
    pub fn encoding_angles(&self, image: &Tensor) -> Result<Vec<f64>> {
        Ok(self.frontend(image.data())?.angles())
    }

    /// Joint probabilities over the kept wires for given encoding angles.
    pub fn quantum_forward(&self, angles: &[f64], noise: &NoiseSpec) -> Result<Vec<f64>> {
        if angles.len() != N_QUBITS {
            return Err(Error::shape(format!(
                "{} encoding angles, expected {N_QUBITS}",
                angles.len()
            )));
        }
        evaluate(&qcnn_circuit(noise)?, &self.circuit_params(angles), &qcnn_readout())
    }

    fn head(&self, probs: &[f64]) -> Result<Vec<f64>> {
        dense_forward(probs, self.params.slice("head.w"), self.params.slice("head.b"))
    }

    pub fn forward(&self, image: &Tensor, noise: &NoiseSpec) -> Result<Vec<f64>> {
        Ok(self.predict_logits(&[image.data()], noise)?.remove(0))
    }

    pub fn predict_logits(&self, images: &[&[f64]], noise: &NoiseSpec) -> Result<Vec<Vec<f64>>> {
        let c = qcnn_circuit(noise)?;
        let readout = qcnn_readout();
        images
            .par_iter()
            .map(|img| {
                let angles = self.frontend(img)?.angles();
                let probs = evaluate(&c, &self.circuit_params(&angles), &readout)?;
                self.head(&probs)
            })
            .collect()
    }

    fn sample_grad(&self, c: &CircuitIR, image: &[f64], label: usize) -> Result<(f64, bool, Vec<f64>)> {
        let fe = self.frontend(image)?;
        let all_slots: Vec<usize> = (0..c.n_params()).collect();
        let jac = param_shift_jacobian(c, &self.circuit_params(&fe.angles()), &qcnn_readout(), &all_slots)?;
        let logits = self.head(&jac.value)?;
        let (loss, dlogits) = softmax_xent(&logits, label)?;
        let hit = argmax(&logits) == label;

        let mut grad = vec![0.0; self.params.len()];
        let hg = dense_backward(&jac.value, self.params.slice("head.w"), &dlogits)?;
        self.params.grad_slice(&mut grad, "head.w").copy_from_slice(&hg.dw);
        self.params.grad_slice(&mut grad, "head.b").copy_from_slice(&hg.db);

        let dslot: Vec<f64> = jac
            .grads
            .iter()
            .map(|d| d.iter().zip(&hg.dx).map(|(a, b)| a * b).sum())
            .collect();
        self.params
            .grad_slice(&mut grad, "qconv")
            .copy_from_slice(&dslot[N_QUBITS..N_QUBITS + Self::N_QCONV]);
        self.params
            .grad_slice(&mut grad, "qpool")
            .copy_from_slice(&dslot[N_QUBITS + Self::N_QCONV..]);

        // angle = π σ(z)  ⇒  dz = dangle · π σ (1 − σ)
        let dz: Vec<f64> = fe
            .sig
            .iter()
            .zip(&dslot[..N_QUBITS])
            .map(|(s, d)| d * PI * s * (1.0 - s))
            .collect();
        let ag = dense_backward(&fe.pooled, self.params.slice("affine.w"), &dz)?;
        self.params.grad_slice(&mut grad, "affine.w").copy_from_slice(&ag.dw);
        self.params.grad_slice(&mut grad, "affine.b").copy_from_slice(&ag.db);
        let cells = fe.conv_out.len() / FRONTEND.filters;
        let dconv = avgpool_global_backward(&ag.dx, cells);
        let cg = FRONTEND.backward(&fe.image, self.params.slice("conv.w"), &fe.conv_out, &dconv)?;
        self.params.grad_slice(&mut grad, "conv.w").copy_from_slice(&cg.dw);
        self.params.grad_slice(&mut grad, "conv.b").copy_from_slice(&cg.db);
        Ok((loss, hit, grad))
    }

    pub fn batch_grad(&self, images: &[&[f64]], labels: &[u8], noise: &NoiseSpec) -> Result<BatchGrad> {
        let c = qcnn_circuit(noise)?;
        let labels: Vec<usize> = labels.iter().map(|&l| check_label(l)).collect::<Result<_>>()?;
        let per_sample = images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(img, &label)| self.sample_grad(&c, img, label))
            .collect::<Result<Vec<_>>>()?;
        let mut out = BatchGrad {
            loss_sum: 0.0,
            correct: 0,
            grad_sum: vec![0.0; self.params.len()],
        };
        for (loss, hit, g) in per_sample {
            out.loss_sum += loss;
            out.correct += usize::from(hit);
            add_into(&mut out.grad_sum, &g);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- dispatch

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    QuanNN(QuanNNModel),
    Qcnn(QCNNModel),
}

impl Model {
    pub fn new(kind: ModelKind, height: usize, width: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Quannn => Model::QuanNN(QuanNNModel::new(height, width, seed)?),
            ModelKind::Qcnn => Model::Qcnn(QCNNModel::new(height, width, seed)?),
        })
    }

    pub fn zeros(kind: ModelKind, height: usize, width: usize) -> Result<Self> {
        Ok(match kind {
            ModelKind::Quannn => Model::QuanNN(QuanNNModel::zeros(height, width)?),
            ModelKind::Qcnn => Model::Qcnn(QCNNModel::zeros(height, width)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::QuanNN(_) => ModelKind::Quannn,
            Model::Qcnn(_) => ModelKind::Qcnn,
        }
    }

    pub fn image_dims(&self) -> (usize, usize) {
        match self {
            Model::QuanNN(m) => (m.height, m.width),
            Model::Qcnn(m) => (m.height, m.width),
        }
    }

    pub fn params(&self) -> &ParamStore {
        match self {
            Model::QuanNN(m) => &m.params,
            Model::Qcnn(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            Model::QuanNN(m) => &mut m.params,
            Model::Qcnn(m) => &mut m.params,
        }
    }

    pub fn forward(&self, image: &Tensor, noise: &NoiseSpec) -> Result<Vec<f64>> {
        match self {
            Model::QuanNN(m) => m.forward(image, noise),
            Model::Qcnn(m) => m.forward(image, noise),
        }
    }

    pub fn predict_logits(&self, images: &[&[f64]], noise: &NoiseSpec) -> Result<Vec<Vec<f64>>> {
        match self {
            Model::QuanNN(m) => m.predict_logits(images, noise),
            Model::Qcnn(m) => m.predict_logits(images, noise),
        }
    }

    pub fn batch_grad(&self, images: &[&[f64]], labels: &[u8], noise: &NoiseSpec) -> Result<BatchGrad> {
        if images.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        match self {
            Model::QuanNN(m) => m.batch_grad(images, labels, noise),
            Model::Qcnn(m) => m.batch_grad(images, labels, noise),
        }
    }

    /// Loss of one sample and its gradient over all parameters.
    pub fn backward(&self, image: &Tensor, label: u8, noise: &NoiseSpec) -> Result<(f64, Vec<f64>)> {
        let g = self.batch_grad(&[image.data()], &[label], noise)?;
        Ok((g.loss_sum, g.grad_sum))
    }

    pub fn loss(&self, image: &Tensor, label: u8, noise: &NoiseSpec) -> Result<f64> {
        let logits = self.forward(image, noise)?;
        Ok(softmax_xent(&logits, check_label(label)?)?.0)
    }
}

/// Images evaluated per chunk when scoring a split.
const EVAL_CHUNK: usize = 64;

/// Fraction of samples whose argmax logit matches the label.
pub fn evaluate_accuracy(model: &Model, set: &LabeledImageSet, noise: &NoiseSpec) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptyResult("cannot evaluate on an empty split".into()));
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let images: Vec<&[f64]> = chunk.iter().map(|&i| set.image(i)).collect();
        for (logits, &i) in model.predict_logits(&images, noise)?.iter().zip(chunk) {
            correct += usize::from(argmax(logits) == set.labels()[i] as usize);
        }
    }
    Ok(correct as f64 / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub noise: NoiseSpec,
    pub seed: u64,
}

/// Model plus optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    adam: AdamState,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        if config.batch == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(config.lr >= 0.0 && config.lr.is_finite()) {
            return Err(Error::config(format!(
                "learning rate {} must be finite and ≥ 0",
                config.lr
            )));
        }
        let adam = AdamState::new(model.params().len());
        Ok(Self {
            model,
            config,
            adam,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over `train` in a seeded order, one Adam step per batch on
    /// the mean gradient; then validation accuracy. Train loss/accuracy are
    /// accumulated during the pass.
    pub fn train_epoch(&mut self, train: &LabeledImageSet, val: &LabeledImageSet) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::EmptyResult("training split is empty".into()));
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        SplitMix64::derive(self.config.seed, self.epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for batch in order.chunks(self.config.batch) {
            let images: Vec<&[f64]> = batch.iter().map(|&i| train.image(i)).collect();
            let labels: Vec<u8> = batch.iter().map(|&i| train.labels()[i]).collect();
            let mut g = self.model.batch_grad(&images, &labels, &self.config.noise)?;
            loss_sum += g.loss_sum;
            correct += g.correct;
            let scale = 1.0 / batch.len() as f64;
            g.grad_sum.iter_mut().for_each(|v| *v *= scale);
            if g.grad_sum.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite gradient during training".into()));
            }
            self.adam
                .step(self.model.params_mut().values_mut(), &g.grad_sum, self.config.lr)?;
        }
        let val_acc = evaluate_accuracy(&self.model, val, &self.config.noise)?;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_acc,
        };
        self.epoch += 1;
        Ok(metrics)
    }
}

// ---------------------------------------------------------------- checkpoints

const CHECKPOINT_MAGIC: &[u8; 8] = b"HQNNCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Versioned header, then every named slice as little-endian f64s.
pub fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let kind = model.kind().token().as_bytes();
    out.extend_from_slice(&(kind.len() as u32).to_le_bytes());
    out.extend_from_slice(kind);
    let (h, w) = model.image_dims();
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    let store = model.params();
    out.extend_from_slice(&(store.slices().len() as u32).to_le_bytes());
    for (name, a, b) in store.slices() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&((b - a) as u64).to_le_bytes());
        for v in &store.values()[*a..*b] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(field, "checkpoint is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)? as usize;
        String::from_utf8(self.take(n, field)?.to_vec()).map_err(|_| Error::format(field, "not UTF-8"))
    }
}

pub fn model_from_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "checkpoint magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint magic", "not a model checkpoint"));
    }
    let version = cur.u32("checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint version",
            format!("unsupported version {version}"),
        ));
    }
    let kind: ModelKind = cur
        .string("model kind")?
        .parse()
        .map_err(|e: Error| Error::format("model kind", e.to_string()))?;
    let h = cur.u32("image height")? as usize;
    let w = cur.u32("image width")? as usize;
    let mut model = Model::zeros(kind, h, w).map_err(|e| Error::format("image dims", e.to_string()))?;
    let n_slices = cur.u32("slice count")? as usize;
    if n_slices != model.params().slices().len() {
        return Err(Error::format(
            "slice count",
            format!("{n_slices} slices, {kind} has {}", model.params().slices().len()),
        ));
    }
    for _ in 0..n_slices {
        let name = cur.string("slice name")?;
        let len = cur.u64("slice length")? as usize;
        let range = model
            .params()
            .range(&name)
            .map_err(|_| Error::format("slice name", format!("unexpected slice `{name}`")))?;
        if range.len() != len {
            return Err(Error::format(
                "slice length",
                format!("`{name}` has {len} values, expected {}", range.len()),
            ));
        }
        let raw = cur.take(8 * len, "slice values")?;
        for (dst, chunk) in model.params_mut().values_mut()[range]
            .iter_mut()
            .zip(raw.chunks_exact(8))
        {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::format("checkpoint", "trailing bytes after the last slice"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    model_from_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKind;

    fn random_image(rng: &mut SplitMix64, h: usize, w: usize) -> Tensor {
        Tensor::new(vec![h, w], (0..h * w).map(|_| rng.next_f64()).collect()).unwrap()
    }

    fn noise(kind: NoiseKind, p: f64) -> NoiseSpec {
        NoiseSpec::new(kind, p).unwrap()
    }

    /// Central difference of the loss over every parameter.
    fn fd_grad(model: &Model, image: &Tensor, label: u8, noise: &NoiseSpec) -> Vec<f64> {
        let h = 1e-5;
        (0..model.params().len())
            .map(|i| {
                let mut m = model.clone();
                m.params_mut().values_mut()[i] += h;
                let plus = m.loss(image, label, noise).unwrap();
                m.params_mut().values_mut()[i] -= 2.0 * h;
                let minus = m.loss(image, label, noise).unwrap();
                (plus - minus) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quanvolve_zero_image_zero_params() {
        let img = Tensor::zeros(vec![4, 4]);
        let out = quanvolve(&img, &[0.0; 12], &NoiseSpec::NONE).unwrap();
        assert_eq!(out.shape(), &[4, 2, 2]);
        assert!(out.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(quanvolve(&Tensor::zeros(vec![3, 4]), &[0.0; 12], &NoiseSpec::NONE).is_err());
    }

    #[test]
    fn quanvolve_depolarizing_attenuates() {
        let img = Tensor::zeros(vec![2, 2]);
        let out = quanvolve(&img, &[0.0; 12], &noise(NoiseKind::Depolarizing, 0.75)).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
        let mild = quanvolve(&img, &[0.0; 12], &noise(NoiseKind::Depolarizing, 0.1)).unwrap();
        assert!(mild.data().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn quanvolve_patch_matches_standalone_filter() {
        let mut rng = SplitMix64::new(5);
        let img = random_image(&mut rng, 4, 6);
        let q: Vec<f64> = (0..12).map(|_| rng.uniform(0.0, TAU)).collect();
        let nz = noise(NoiseKind::AmplitudeDamping, 0.3);
        let out = quanvolve(&img, &q, &nz).unwrap();
        let c = filter_circuit(&nz).unwrap();
        let (py, px) = (1, 2);
        let patch = patch_at(img.data(), 6, py, px);
        let direct = evaluate(&c, &filter_params(&patch, &q), &Readout::ExpectZ).unwrap();
        for ch in 0..4 {
            assert_eq!(out.data()[(ch * 2 + py) * 3 + px], direct[ch]);
        }
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn quannn_dims_and_determinism() {
        let m = QuanNNModel::new(28, 28, 1).unwrap();
        assert_eq!(m.feature_len(), 784);
        assert_eq!(m.params().len(), 12 + 4 * 784 + 4);
        let m = Model::new(ModelKind::Quannn, 8, 8, 3).unwrap();
        let img = random_image(&mut SplitMix64::new(1), 8, 8);
        let a = m.forward(&img, &NoiseSpec::NONE).unwrap();
        assert_eq!(a, m.forward(&img, &NoiseSpec::NONE).unwrap());
        for kind in NoiseKind::ALL_CHANNELS {
            let b = m.forward(&img, &noise(kind, 0.0)).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quannn_zero_head_kills_quantum_grads() {
        let mut m = Model::new(ModelKind::Quannn, 4, 4, 2).unwrap();
        m.params_mut().get_mut("head.w").unwrap().fill(0.0);
        let img = random_image(&mut SplitMix64::new(2), 4, 4);
        let (_, g) = m.backward(&img, 1, &noise(NoiseKind::BitFlip, 0.2)).unwrap();
        assert_eq!(g.len(), 12 + 4 * 16 + 4);
        assert!(g[..12].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quannn_gradient_matches_finite_difference() {
        let mut rng = SplitMix64::new(11);
        let img = random_image(&mut rng, 8, 8);
        let m = Model::new(ModelKind::Quannn, 8, 8, 7).unwrap();
        for nz in [NoiseSpec::NONE, noise(NoiseKind::PhaseDamping, 0.4)] {
            let (_, g) = m.backward(&img, 2, &nz).unwrap();
            let fd = fd_grad(&m, &img, 2, &nz);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-4, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shared_patches_do_not_change_gradients() {
        // Repeated patches are differentiated once; the result must equal the
        // sum of per-image gradients.
        let mut rng = SplitMix64::new(12);
        let m = Model::new(ModelKind::Quannn, 4, 4, 9).unwrap();
        let mut a = random_image(&mut rng, 4, 4);
        let b = Tensor::zeros(vec![4, 4]);
        a.data_mut()[..2].copy_from_slice(&[0.0, 0.0]);
        let nz = noise(NoiseKind::Depolarizing, 0.1);
        let joint = m.batch_grad(&[a.data(), b.data()], &[0, 3], &nz).unwrap();
        let (la, ga) = m.backward(&a, 0, &nz).unwrap();
        let (lb, gb) = m.backward(&b, 3, &nz).unwrap();
        assert!((joint.loss_sum - la - lb).abs() < 1e-12);
        for i in 0..ga.len() {
            assert!((joint.grad_sum[i] - ga[i] - gb[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn qcnn_param_counts() {
        let m = QCNNModel::zeros(28, 28).unwrap();
        assert_eq!(QCNNModel::N_QCONV + QCNNModel::N_QPOOL, 42);
        assert_eq!(m.params().len(), 100 + 4 + 16 + 4 + 42 + 16 + 4);
        assert_eq!(qcnn_circuit(&NoiseSpec::NONE).unwrap().n_params(), 46);
        assert!(QCNNModel::zeros(4, 4).is_err());
    }

    #[test]
    fn qcnn_zero_angles_give_ground_state() {
        let m = QCNNModel::zeros(8, 8).unwrap();
        let p = m.quantum_forward(&[0.0; 4], &NoiseSpec::NONE).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn qcnn_basis_state_through_cnots_and_pooling() {
        // Classical bit-tracking oracle: zero-parameter ROTs are identities,
        // so |1100⟩ is permuted by the CNOT rings, then wires 1 and 3 are
        // measured away with identity corrections.
        let mut bits = [1u8, 1, 0, 0];
        for l in 0..QCNN_LAYERS {
            let r = l % 3 + 1;
            for w in 0..4 {
                let t = (w + r) % 4;
                bits[t] ^= bits[w];
            }
        }
        let expected = (bits[0] as usize) * 2 + bits[2] as usize;
        let m = QCNNModel::zeros(8, 8).unwrap();
        let p = m.quantum_forward(&[PI, PI, 0.0, 0.0], &NoiseSpec::NONE).unwrap();
        for (i, v) in p.iter().enumerate() {
            let want = if i == expected { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "{p:?} expected index {expected}");
        }
    }

    #[test]
    fn qcnn_probs_valid_under_noise() {
        let m = QCNNModel::new(8, 8, 4).unwrap();
        let angles = [0.3, 1.1, 2.0, 2.9];
        let clean = m.quantum_forward(&angles, &NoiseSpec::NONE).unwrap();
        for kind in NoiseKind::ALL_CHANNELS {
            for p in [0.0, 0.5, 1.0] {
                let probs = m.quantum_forward(&angles, &noise(kind, p)).unwrap();
                assert!(probs.iter().all(|v| *v >= 0.0));
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                if p == 0.0 {
                    for (a, b) in probs.iter().zip(&clean) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn qcnn_angles_bounded() {
        let m = QCNNModel::new(8, 8, 6).unwrap();
        let mut rng = SplitMix64::new(3);
        for _ in 0..5 {
            let angles = m.encoding_angles(&random_image(&mut rng, 8, 8)).unwrap();
            assert!(angles.iter().all(|a| (0.0..=PI).contains(a)));
        }
    }

    #[test]
    fn qcnn_frozen_frontend_only_affine_bias_learns() {
        let mut m = Model::new(ModelKind::Qcnn, 8, 8, 8).unwrap();
        for name in ["conv.w", "conv.b"] {
            m.params_mut().get_mut(name).unwrap().fill(0.0);
        }
        let img = random_image(&mut SplitMix64::new(4), 8, 8);
        let (_, g) = m.backward(&img, 1, &NoiseSpec::NONE).unwrap();
        let p = m.params();
        for name in ["conv.w", "conv.b", "affine.w"] {
            assert!(g[p.range(name).unwrap()].iter().all(|v| *v == 0.0), "{name}");
        }
        assert!(g[p.range("affine.b").unwrap()].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn qcnn_gradient_matches_finite_difference() {
        let mut rng = SplitMix64::new(13);
        let img = random_image(&mut rng, 8, 8);
        let m = Model::new(ModelKind::Qcnn, 8, 8, 21).unwrap();
        for nz in [NoiseSpec::NONE, noise(NoiseKind::BitFlip, 0.3)] {
            let (_, g) = m.backward(&img, 3, &nz).unwrap();
            let fd = fd_grad(&m, &img, 3, &nz);
            for (i, (a, b)) in g.iter().zip(&fd).enumerate() {
                assert!((a - b).abs() < 1e-4, "param {i}: {a} vs {b}");
            }
        }
    }

    fn tiny_set(n: usize, h: usize, seed: u64) -> LabeledImageSet {
        let mut rng = SplitMix64::new(seed);
        let data = (0..n * h * h).map(|_| rng.next_f64()).collect();
        let labels = (0..n).map(|i| (i % 4) as u8).collect();
        LabeledImageSet::new("tiny", Tensor::new(vec![n, h, h], data).unwrap(), labels).unwrap()
    }

    #[test]
    fn zero_lr_leaves_params_and_runs_are_reproducible() {
        let set = tiny_set(6, 4, 1);
        let model = Model::new(ModelKind::Quannn, 4, 4, 5).unwrap();
        let cfg = TrainConfig {
            batch: 5,
            lr: 0.0,
            noise: NoiseSpec::NONE,
            seed: 3,
        };
        let mut t = Trainer::new(model.clone(), cfg).unwrap();
        let m0 = t.train_epoch(&set, &set).unwrap();
        assert_eq!(t.model, model);
        assert!((0.0..=1.0).contains(&m0.train_acc) && (0.0..=1.0).contains(&m0.val_acc));

        let run = || {
            let mut t = Trainer::new(model.clone(), TrainConfig { lr: 0.01, ..cfg }).unwrap();
            (0..2).map(|_| t.train_epoch(&set, &set).unwrap()).collect::<Vec<_>>()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a[1].epoch, 1);
    }

    #[test]
    fn single_sample_accuracy_is_binary() {
        let set = tiny_set(1, 8, 2);
        let m = Model::new(ModelKind::Qcnn, 8, 8, 1).unwrap();
        let acc = evaluate_accuracy(&m, &set, &NoiseSpec::NONE).unwrap();
        assert!(acc == 0.0 || acc == 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        for kind in [ModelKind::Quannn, ModelKind::Qcnn] {
            let m = Model::new(kind, 8, 8, 17).unwrap();
            let bytes = checkpoint_bytes(&m);
            let back = model_from_checkpoint(&bytes).unwrap();
            assert_eq!(back.kind(), kind);
            let bits = |m: &Model| m.params().values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&m));
            assert_eq!(checkpoint_bytes(&back), bytes);

            assert!(matches!(
                model_from_checkpoint(&bytes[..bytes.len() - 3]),
                Err(Error::Format { .. })
            ));
            let mut bad = bytes.clone();
            bad[0] = b'X';
            assert!(
                matches!(model_from_checkpoint(&bad), Err(Error::Format { field, .. }) if field == "checkpoint magic")
            );
        }
    }
}
