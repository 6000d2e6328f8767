//! Auxiliary network layers: dense, ReLU, 2×2 max-pool, batch norm, dropout,
//! flatten, and the softmax cross-entropy head. Each layer caches what its
//! own backward pass needs and exposes gradients through accessors.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::error::{AconvError, Result};
use crate::optim::{init_weights, sgd_momentum_step, InitScheme};
use crate::tensor::Tensor;

/// Fully connected layer with weights `[I,O]` and one bias per output.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    w: Tensor,
    b: Vec<f64>,
    vw: Vec<f64>,
    vb: Vec<f64>,
    d_w: Tensor,
    d_b: Vec<f64>,
    x_cache: Option<Tensor>,
}

impl DenseLayer {
    pub fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = init_weights(&[input, output], input, output, InitScheme::GlorotUniform, rng)
            .expect("dense layer dimensions must be positive");
        Self {
            w,
            b: vec![0.0; output],
            vw: vec![0.0; input * output],
            vb: vec![0.0; output],
            d_w: Tensor::zeros(&[input, output]),
            d_b: vec![0.0; output],
            x_cache: None,
        }
    }

    /// Rebuilds a layer around existing parameters (checkpoint restore).
    pub(crate) fn from_parts(w: Tensor, b: Vec<f64>) -> Result<Self> {
        if w.shape().len() != 2 {
            return Err(AconvError::ShapeMismatch(format!(
                "dense weights must be [I,O], got {:?}",
                w.shape()
            )));
        }
        if b.len() != w.shape()[1] {
            return Err(AconvError::ShapeMismatch(format!(
                "{} outputs need {} biases, got {}",
                w.shape()[1],
                w.shape()[1],
                b.len()
            )));
        }
        let (input, output) = (w.shape()[0], w.shape()[1]);
        Ok(Self {
            w,
            b,
            vw: vec![0.0; input * output],
            vb: vec![0.0; output],
            d_w: Tensor::zeros(&[input, output]),
            d_b: vec![0.0; output],
            x_cache: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn output_size(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn b_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn d_w(&self) -> &Tensor {
        &self.d_w
    }

    pub fn d_b(&self) -> &[f64] {
        &self.d_b
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (i_dim, o_dim) = (self.input_size(), self.output_size());
        if x.shape().len() != 2 || x.shape()[1] != i_dim {
            return Err(AconvError::ShapeMismatch(format!(
                "dense layer expects [B,{i_dim}], got {:?}",
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let mut o = Tensor::zeros(&[batch, o_dim]);
        for bi in 0..batch {
            let row = &x.data()[bi * i_dim..(bi + 1) * i_dim];
            let out = &mut o.data_mut()[bi * o_dim..(bi + 1) * o_dim];
            out.copy_from_slice(&self.b);
            for (xi, wrow) in row.iter().zip(self.w.data().chunks_exact(o_dim)) {
                for (ov, wv) in out.iter_mut().zip(wrow) {
                    *ov += xi * wv;
                }
            }
        }
        self.x_cache = Some(x.clone());
        Ok(o)
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        let x = self
            .x_cache
            .as_ref()
            .ok_or_else(|| AconvError::InvalidState("dense backward before forward".into()))?;
        let (i_dim, o_dim) = (self.input_size(), self.output_size());
        let batch = x.shape()[0];
        if d_o.shape() != [batch, o_dim] {
            return Err(AconvError::ShapeMismatch(format!(
                "dense upstream gradient must be [{batch},{o_dim}], got {:?}",
                d_o.shape()
            )));
        }
        self.d_w.data_mut().fill(0.0);
        self.d_b.fill(0.0);
        let mut d_x = Tensor::zeros(&[batch, i_dim]);
        for bi in 0..batch {
            let xin = &x.data()[bi * i_dim..(bi + 1) * i_dim];
            let grad = &d_o.data()[bi * o_dim..(bi + 1) * o_dim];
            for (db, g) in self.d_b.iter_mut().zip(grad) {
                *db += g;
            }
            let dxr = &mut d_x.data_mut()[bi * i_dim..(bi + 1) * i_dim];
            for ii in 0..i_dim {
                let wrow = &self.w.data()[ii * o_dim..(ii + 1) * o_dim];
                let dwrow = &mut self.d_w.data_mut()[ii * o_dim..(ii + 1) * o_dim];
                let xv = xin[ii];
                let mut acc = 0.0;
                for ((g, wv), dw) in grad.iter().zip(wrow).zip(dwrow.iter_mut()) {
                    *dw += xv * g;
                    acc += g * wv;
                }
                dxr[ii] = acc;
            }
        }
        Ok(d_x)
    }

    pub fn step(&mut self, lr: f64, momentum: f64, clip: f64) -> Result<()> {
        sgd_momentum_step(self.w.data_mut(), self.d_w.data(), &mut self.vw, lr, momentum, clip)?;
        sgd_momentum_step(&mut self.b, &self.d_b, &mut self.vb, lr, momentum, clip)
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Rectified linear unit. Caches the activation mask.
#[derive(Debug, Clone, Default)]
pub struct ReluLayer {
    mask: Vec<f64>,
}

impl ReluLayer {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.mask = x.data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        if d_o.len() != self.mask.len() {
            return Err(AconvError::ShapeMismatch(format!(
                "relu upstream gradient has {} elements, expected {}",
                d_o.len(),
                self.mask.len()
            )));
        }
        let data = d_o.data().iter().zip(&self.mask).map(|(g, m)| g * m).collect();
        Tensor::new(d_o.shape(), data)
    }
}

/// 2×2 max pooling with stride 2 over `[B,H,W,C]`. Ties keep the first
/// candidate in row-major order, so gradients route to a single input.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2Layer {
    argmax: Vec<usize>,
    in_shape: Vec<usize>,
}

impl MaxPool2x2Layer {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 4 {
            return Err(AconvError::ShapeMismatch(format!(
                "max pool expects [B,H,W,C], got {:?}",
                x.shape()
            )));
        }
        let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AconvError::ShapeMismatch(format!(
                "max pool needs even spatial dims, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut o = Tensor::zeros(&[b, ho, wo, c]);
        self.argmax = vec![0; b * ho * wo * c];
        self.in_shape = x.shape().to_vec();
        let idx = |bi: usize, i: usize, j: usize, ch: usize| ((bi * h + i) * w + j) * c + ch;
        for bi in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    for ch in 0..c {
                        let cands = [
                            idx(bi, 2 * i, 2 * j, ch),
                            idx(bi, 2 * i, 2 * j + 1, ch),
                            idx(bi, 2 * i + 1, 2 * j, ch),
                            idx(bi, 2 * i + 1, 2 * j + 1, ch),
                        ];
                        let mut best = cands[0];
                        for &cand in &cands[1..] {
                            if x.data()[cand] > x.data()[best] {
                                best = cand;
                            }
                        }
                        let out_pos = ((bi * ho + i) * wo + j) * c + ch;
                        o.data_mut()[out_pos] = x.data()[best];
                        self.argmax[out_pos] = best;
                    }
                }
            }
        }
        Ok(o)
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        if self.in_shape.is_empty() {
            return Err(AconvError::InvalidState("max pool backward before forward".into()));
        }
        if d_o.len() != self.argmax.len() {
            return Err(AconvError::ShapeMismatch(format!(
                "max pool upstream gradient has {} elements, expected {}",
                d_o.len(),
                self.argmax.len()
            )));
        }
        let mut d_x = Tensor::zeros(&self.in_shape);
        for (&src, &g) in self.argmax.iter().zip(d_o.data()) {
            d_x.data_mut()[src] += g;
        }
        Ok(d_x)
    }
}

/// Batch normalization over the trailing feature axis. Leading axes (batch
/// and any spatial dims) are pooled into the normalization statistics.
#[derive(Debug, Clone)]
pub struct BatchNormLayer {
    features: usize,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
    momentum: f64,
    eps: f64,
    v_gamma: Vec<f64>,
    v_beta: Vec<f64>,
    d_gamma: Vec<f64>,
    d_beta: Vec<f64>,
    xhat: Option<Tensor>,
    istd: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(features: usize) -> Self {
        Self {
            features,
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: 0.99,
            eps: 1e-5,
            v_gamma: vec![0.0; features],
            v_beta: vec![0.0; features],
            d_gamma: vec![0.0; features],
            d_beta: vec![0.0; features],
            xhat: None,
            istd: vec![0.0; features],
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn gamma_mut(&mut self) -> &mut [f64] {
        &mut self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    pub fn running_mean(&self) -> &[f64] {
        &self.running_mean
    }

    pub fn running_mean_mut(&mut self) -> &mut [f64] {
        &mut self.running_mean
    }

    pub fn running_var(&self) -> &[f64] {
        &self.running_var
    }

    pub fn running_var_mut(&mut self) -> &mut [f64] {
        &mut self.running_var
    }

    pub fn d_gamma(&self) -> &[f64] {
        &self.d_gamma
    }

    pub fn d_beta(&self) -> &[f64] {
        &self.d_beta
    }

    fn check_shape(&self, x: &Tensor) -> Result<usize> {
        let last = *x.shape().last().unwrap();
        if x.shape().len() < 2 || last != self.features {
            return Err(AconvError::ShapeMismatch(format!(
                "batch norm over {} features cannot take {:?}",
                self.features,
                x.shape()
            )));
        }
        Ok(x.len() / self.features)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let rows = self.check_shape(x)?;
        let f = self.features;
        let mut mean = vec![0.0; f];
        for row in x.data().chunks_exact(f) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; f];
        for row in x.data().chunks_exact(f) {
            for ((vv, v), m) in var.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *vv += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        for i in 0..f {
            self.running_mean[i] = self.momentum * self.running_mean[i] + (1.0 - self.momentum) * mean[i];
            self.running_var[i] = self.momentum * self.running_var[i] + (1.0 - self.momentum) * var[i];
            self.istd[i] = 1.0 / (var[i] + self.eps).sqrt();
        }
        let mut xhat = Tensor::zeros(x.shape());
        let mut o = Tensor::zeros(x.shape());
        for (xrow, (hrow, orow)) in x
            .data()
            .chunks_exact(f)
            .zip(xhat.data_mut().chunks_exact_mut(f).zip(o.data_mut().chunks_exact_mut(f)))
        {
            for i in 0..f {
                let h = (xrow[i] - mean[i]) * self.istd[i];
                hrow[i] = h;
                orow[i] = self.gamma[i] * h + self.beta[i];
            }
        }
        self.xhat = Some(xhat);
        Ok(o)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_shape(x)?;
        let f = self.features;
        let mut o = Tensor::zeros(x.shape());
        let istd: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        for (xrow, orow) in x.data().chunks_exact(f).zip(o.data_mut().chunks_exact_mut(f)) {
            for i in 0..f {
                orow[i] = self.gamma[i] * (xrow[i] - self.running_mean[i]) * istd[i] + self.beta[i];
            }
        }
        Ok(o)
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        let xhat = self
            .xhat
            .as_ref()
            .ok_or_else(|| AconvError::InvalidState("batch norm backward before forward".into()))?;
        if d_o.shape() != xhat.shape() {
            return Err(AconvError::ShapeMismatch(format!(
                "batch norm upstream gradient {:?} does not match cached input {:?}",
                d_o.shape(),
                xhat.shape()
            )));
        }
        let f = self.features;
        let rows = d_o.len() / f;
        let mut sum_d = vec![0.0; f];
        let mut sum_dh = vec![0.0; f];
        self.d_gamma.fill(0.0);
        self.d_beta.fill(0.0);
        for (drow, hrow) in d_o.data().chunks_exact(f).zip(xhat.data().chunks_exact(f)) {
            for i in 0..f {
                sum_d[i] += drow[i];
                sum_dh[i] += drow[i] * hrow[i];
                self.d_gamma[i] += drow[i] * hrow[i];
                self.d_beta[i] += drow[i];
            }
        }
        let inv_rows = 1.0 / rows as f64;
        let mut d_x = Tensor::zeros(d_o.shape());
        for (xrow, (drow, hrow)) in d_x
            .data_mut()
            .chunks_exact_mut(f)
            .zip(d_o.data().chunks_exact(f).zip(xhat.data().chunks_exact(f)))
        {
            for i in 0..f {
                xrow[i] = self.gamma[i]
                    * self.istd[i]
                    * (drow[i] - sum_d[i] * inv_rows - hrow[i] * sum_dh[i] * inv_rows);
            }
        }
        Ok(d_x)
    }

    pub fn step(&mut self, lr: f64, momentum: f64, clip: f64) -> Result<()> {
        sgd_momentum_step(&mut self.gamma, &self.d_gamma, &mut self.v_gamma, lr, momentum, clip)?;
        sgd_momentum_step(&mut self.beta, &self.d_beta, &mut self.v_beta, lr, momentum, clip)
    }

    pub fn parameter_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// Inverted dropout with its own deterministic stream. The stream advances
/// only in train mode, so evaluation passes never perturb reproducibility.
#[derive(Debug, Clone)]
pub struct DropoutLayer {
    p: f64,
    seed: u64,
    rng: ChaCha8Rng,
    mask: Vec<f64>,
}

impl DropoutLayer {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(AconvError::InvalidArgument(format!(
                "dropout rate must be in [0,1), got {p}"
            )));
        }
        Ok(Self { p, seed, rng: ChaCha8Rng::seed_from_u64(seed), mask: Vec::new() })
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        let keep = 1.0 - self.p;
        self.mask = (0..x.len())
            .map(|_| if self.rng.gen::<f64>() < self.p { 0.0 } else { 1.0 / keep })
            .collect();
        let data = x.data().iter().zip(&self.mask).map(|(v, m)| v * m).collect();
        Tensor::new(x.shape(), data)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        if d_o.len() != self.mask.len() {
            return Err(AconvError::ShapeMismatch(format!(
                "dropout upstream gradient has {} elements, expected {}",
                d_o.len(),
                self.mask.len()
            )));
        }
        let data = d_o.data().iter().zip(&self.mask).map(|(g, m)| g * m).collect();
        Tensor::new(d_o.shape(), data)
    }
}

/// Collapses `[B, ...]` into `[B, prod(...)]` and restores the shape on the
/// way back.
#[derive(Debug, Clone, Default)]
pub struct FlattenLayer {
    in_shape: Vec<usize>,
}

impl FlattenLayer {
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() < 2 {
            return Err(AconvError::ShapeMismatch(format!(
                "flatten expects a batch axis, got {:?}",
                x.shape()
            )));
        }
        self.in_shape = x.shape().to_vec();
        let b = x.shape()[0];
        Tensor::new(&[b, x.len() / b], x.data().to_vec())
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        if self.in_shape.is_empty() {
            return Err(AconvError::InvalidState("flatten backward before forward".into()));
        }
        Tensor::new(&self.in_shape, d_o.data().to_vec())
    }
}

/// Mean softmax cross-entropy over a batch of logits `[B,K]`, with the
/// gradient with respect to the logits.
pub fn softmax_crossentropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(AconvError::ShapeMismatch(format!(
            "logits must be [B,K], got {:?}",
            logits.shape()
        )));
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b {
        return Err(AconvError::ShapeMismatch(format!(
            "{b} logit rows need {b} labels, got {}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(AconvError::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let mut grad = Tensor::zeros(&[b, k]);
    let mut loss = 0.0;
    let inv_b = 1.0 / b as f64;
    for (bi, (row, grow)) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .enumerate()
    {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (g, &v) in grow.iter_mut().zip(row) {
            let e = (v - m).exp();
            *g = e;
            z += e;
        }
        loss += m + z.ln() - row[labels[bi]];
        for g in grow.iter_mut() {
            *g = *g / z * inv_b;
        }
        grow[labels[bi]] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}
