//! A small sequential network container over the layer zoo, with batched
//! forward/backward, SGD stepping, and a binary parameter checkpoint.
//!
//! Convolutional layers map over the items of a batch (in parallel when
//! worker threads are available) and reduce their gradients in fixed batch
//! order, so results are bit-identical at any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::envelope::SigmaGradMode;
use crate::error::{AconvError, Result};
use crate::layers::{
    aconv_backward, aconv_forward, conv_backward, conv_forward, AconvCache, AdaptiveKernelParams,
    BatchNormLayer, ConvCache, DenseLayer, DropoutLayer, FlattenLayer, MaxPool2x2Layer, ReluLayer,
};
use crate::optim::{clip_sigma, sgd_momentum_step};
use crate::tensor::{Padding, Tensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"ACKP";
const CHECKPOINT_FORMAT: &str = "ackp-v1";

fn split_batch(x: &Tensor) -> Result<Vec<Tensor>> {
    if x.shape().len() < 2 {
        return Err(AconvError::ShapeMismatch(format!(
            "expected a batched tensor, got {:?}",
            x.shape()
        )));
    }
    let b = x.shape()[0];
    let item_shape = &x.shape()[1..];
    let isz = x.len() / b;
    (0..b).map(|i| Tensor::new(item_shape, x.data()[i * isz..(i + 1) * isz].to_vec())).collect()
}

fn join_batch(items: &[Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| AconvError::InvalidState("cannot assemble an empty batch".into()))?;
    let mut shape = Vec::with_capacity(first.shape().len() + 1);
    shape.push(items.len());
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(items.len() * first.len());
    for it in items {
        if it.shape() != first.shape() {
            return Err(AconvError::ShapeMismatch(format!(
                "ragged batch: {:?} next to {:?}",
                it.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(it.data());
    }
    Tensor::new(&shape, data)
}

/// Batched adaptive convolution layer: owns parameters, momentum state, and
/// the per-item forward caches of the most recent batch.
#[derive(Debug, Clone)]
pub struct AconvNetLayer {
    params: AdaptiveKernelParams,
    padding: Padding,
    vw: Vec<f64>,
    vb: Vec<f64>,
    vsig: Vec<f64>,
    caches: Vec<AconvCache>,
    d_w: Tensor,
    d_bias: Vec<f64>,
    d_sigmas: Vec<f64>,
}

impl AconvNetLayer {
    pub fn new(params: AdaptiveKernelParams, padding: Padding) -> Self {
        let wlen = params.w().len();
        let q = params.filters();
        let d_w = Tensor::zeros(params.w().shape());
        Self {
            params,
            padding,
            vw: vec![0.0; wlen],
            vb: vec![0.0; q],
            vsig: vec![0.0; q],
            caches: Vec::new(),
            d_w,
            d_bias: vec![0.0; q],
            d_sigmas: vec![0.0; q],
        }
    }

    pub fn params(&self) -> &AdaptiveKernelParams {
        &self.params
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 4 {
            return Err(AconvError::ShapeMismatch(format!(
                "adaptive convolution expects [B,H,W,C], got {:?}",
                x.shape()
            )));
        }
        let items = split_batch(x)?;
        let results: Vec<(Tensor, AconvCache)> = items
            .par_iter()
            .map(|item| aconv_forward(item, &self.params, self.padding))
            .collect::<Result<Vec<_>>>()?;
        let mut outs = Vec::with_capacity(results.len());
        self.caches.clear();
        for (o, cache) in results {
            outs.push(o);
            self.caches.push(cache);
        }
        join_batch(&outs)
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        if d_o.shape().len() != 4 || d_o.shape()[0] != self.caches.len() {
            return Err(AconvError::InvalidState(format!(
                "upstream gradient {:?} does not match the cached batch of {}",
                d_o.shape(),
                self.caches.len()
            )));
        }
        let items = split_batch(d_o)?;
        let grads = items
            .par_iter()
            .zip(self.caches.par_iter())
            .map(|(g, cache)| aconv_backward(g, cache))
            .collect::<Result<Vec<_>>>()?;
        self.d_w.data_mut().fill(0.0);
        self.d_bias.fill(0.0);
        self.d_sigmas.fill(0.0);
        let mut dx_items = Vec::with_capacity(grads.len());
        for g in grads {
            for (a, b) in self.d_w.data_mut().iter_mut().zip(g.d_w.data()) {
                *a += b;
            }
            for (a, b) in self.d_bias.iter_mut().zip(&g.d_bias) {
                *a += b;
            }
            for (a, b) in self.d_sigmas.iter_mut().zip(&g.d_sigmas) {
                *a += b;
            }
            dx_items.push(g.d_x);
        }
        join_batch(&dx_items)
    }

    pub fn step(&mut self, lr: f64, momentum: f64, clip: f64) -> Result<()> {
        sgd_momentum_step(self.params.w_mut().data_mut(), self.d_w.data(), &mut self.vw, lr, momentum, clip)?;
        sgd_momentum_step(self.params.bias_mut(), &self.d_bias, &mut self.vb, lr, momentum, clip)?;
        sgd_momentum_step(self.params.sigmas_mut(), &self.d_sigmas, &mut self.vsig, lr, momentum, clip)?;
        let n = self.params.n();
        clip_sigma(self.params.sigmas_mut(), n);
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.w().len() + self.params.bias().len() + self.params.sigmas().len()
    }
}

/// Batched ordinary convolution layer, the fixed-kernel baseline.
#[derive(Debug, Clone)]
pub struct ConvNetLayer {
    w: Tensor,
    bias: Vec<f64>,
    padding: Padding,
    vw: Vec<f64>,
    vb: Vec<f64>,
    caches: Vec<ConvCache>,
    d_w: Tensor,
    d_bias: Vec<f64>,
}

impl ConvNetLayer {
    pub fn new(w: Tensor, bias: Vec<f64>, padding: Padding) -> Result<Self> {
        if w.shape().len() != 4 || w.shape()[0] != w.shape()[1] {
            return Err(AconvError::ShapeMismatch(format!(
                "weights must be [n,n,C,Q], got {:?}",
                w.shape()
            )));
        }
        if bias.len() != w.shape()[3] {
            return Err(AconvError::ShapeMismatch(format!(
                "{} filters need {} biases, got {}",
                w.shape()[3],
                w.shape()[3],
                bias.len()
            )));
        }
        let wlen = w.len();
        let q = bias.len();
        let d_w = Tensor::zeros(w.shape());
        Ok(Self {
            w,
            bias,
            padding,
            vw: vec![0.0; wlen],
            vb: vec![0.0; q],
            caches: Vec::new(),
            d_w,
            d_bias: vec![0.0; q],
        })
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 4 {
            return Err(AconvError::ShapeMismatch(format!(
                "convolution expects [B,H,W,C], got {:?}",
                x.shape()
            )));
        }
        let items = split_batch(x)?;
        let results: Vec<(Tensor, ConvCache)> = items
            .par_iter()
            .map(|item| conv_forward(item, &self.w, &self.bias, self.padding))
            .collect::<Result<Vec<_>>>()?;
        let mut outs = Vec::with_capacity(results.len());
        self.caches.clear();
        for (o, cache) in results {
            outs.push(o);
            self.caches.push(cache);
        }
        join_batch(&outs)
    }

    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        if d_o.shape().len() != 4 || d_o.shape()[0] != self.caches.len() {
            return Err(AconvError::InvalidState(format!(
                "upstream gradient {:?} does not match the cached batch of {}",
                d_o.shape(),
                self.caches.len()
            )));
        }
        let items = split_batch(d_o)?;
        let grads = items
            .par_iter()
            .zip(self.caches.par_iter())
            .map(|(g, cache)| conv_backward(g, cache))
            .collect::<Result<Vec<_>>>()?;
        self.d_w.data_mut().fill(0.0);
        self.d_bias.fill(0.0);
        let mut dx_items = Vec::with_capacity(grads.len());
        for g in grads {
            for (a, b) in self.d_w.data_mut().iter_mut().zip(g.d_w.data()) {
                *a += b;
            }
            for (a, b) in self.d_bias.iter_mut().zip(&g.d_bias) {
                *a += b;
            }
            dx_items.push(g.d_x);
        }
        join_batch(&dx_items)
    }

    pub fn step(&mut self, lr: f64, momentum: f64, clip: f64) -> Result<()> {
        sgd_momentum_step(self.w.data_mut(), self.d_w.data(), &mut self.vw, lr, momentum, clip)?;
        sgd_momentum_step(&mut self.bias, &self.d_bias, &mut self.vb, lr, momentum, clip)
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.bias.len()
    }
}

/// One network layer. The enum keeps the container simple and the
/// checkpoint format closed.
#[derive(Debug, Clone)]
pub enum Layer {
    Aconv(AconvNetLayer),
    Conv(ConvNetLayer),
    BatchNorm(BatchNormLayer),
    Relu(ReluLayer),
    MaxPool(MaxPool2x2Layer),
    Dropout(DropoutLayer),
    Flatten(FlattenLayer),
    Dense(DenseLayer),
}

impl Layer {
    /// Runs the layer; `train` selects batch statistics for batch norm and
    /// live masks for dropout.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        match self {
            Layer::Aconv(l) => l.forward(x),
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => {
                if train {
                    l.forward_train(x)
                } else {
                    l.forward_eval(x)
                }
            }
            Layer::Relu(l) => l.forward(x),
            Layer::MaxPool(l) => l.forward(x),
            Layer::Dropout(l) => {
                if train {
                    l.forward_train(x)
                } else {
                    l.forward_eval(x)
                }
            }
            Layer::Flatten(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x),
        }
    }

    /// Propagates the upstream gradient and records parameter gradients.
    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Aconv(l) => l.backward(d_o),
            Layer::Conv(l) => l.backward(d_o),
            Layer::BatchNorm(l) => l.backward(d_o),
            Layer::Relu(l) => l.backward(d_o),
            Layer::MaxPool(l) => l.backward(d_o),
            Layer::Dropout(l) => l.backward(d_o),
            Layer::Flatten(l) => l.backward(d_o),
            Layer::Dense(l) => l.backward(d_o),
        }
    }

    /// Applies one clipped SGD-with-momentum update to the layer's
    /// parameters, if it has any.
    pub fn step(&mut self, lr: f64, momentum: f64, clip: f64) -> Result<()> {
        match self {
            Layer::Aconv(l) => l.step(lr, momentum, clip),
            Layer::Conv(l) => l.step(lr, momentum, clip),
            Layer::BatchNorm(l) => l.step(lr, momentum, clip),
            Layer::Dense(l) => l.step(lr, momentum, clip),
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Dropout(_) | Layer::Flatten(_) => Ok(()),
        }
    }

    /// Number of trainable and tracked parameters in the layer.
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Aconv(l) => l.parameter_count(),
            Layer::Conv(l) => l.parameter_count(),
            Layer::BatchNorm(l) => l.parameter_count(),
            Layer::Dense(l) => l.parameter_count(),
            Layer::Relu(_) | Layer::MaxPool(_) | Layer::Dropout(_) | Layer::Flatten(_) => 0,
        }
    }
}

fn mode_label(mode: SigmaGradMode) -> &'static str {
    match mode {
        SigmaGradMode::Normalized => "normalized",
        SigmaGradMode::ScaleFrozen => "scale_frozen",
    }
}

fn mode_from_label(s: &str) -> Result<SigmaGradMode> {
    match s {
        "normalized" => Ok(SigmaGradMode::Normalized),
        "scale_frozen" => Ok(SigmaGradMode::ScaleFrozen),
        other => Err(AconvError::DataFormat(format!("unknown aperture gradient mode {other:?}"))),
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    padding: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    /// Apertures as decimal strings; the shortest-roundtrip rendering parses
    /// back to the identical bits.
    #[serde(skip_serializing_if = "Option::is_none")]
    sigmas: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    payload: Vec<(String, Vec<usize>)>,
}

impl LayerHeader {
    fn bare(name: &str, kind: &str) -> Self {
        Self {
            name: name.to_string(),
            kind: kind.to_string(),
            padding: None,
            mode: None,
            sigmas: None,
            rate: None,
            seed: None,
            payload: Vec::new(),
        }
    }

    fn payload_entry(&self, field: &str) -> Result<&[usize]> {
        self.payload
            .iter()
            .find(|(f, _)| f == field)
            .map(|(_, shape)| shape.as_slice())
            .ok_or_else(|| {
                AconvError::DataFormat(format!(
                    "layer {:?} is missing payload field {field:?}",
                    self.name
                ))
            })
    }
}

/// Reads payload floats off the front of `floats` in manifest order.
struct PayloadReader<'a> {
    floats: &'a [f64],
    cursor: usize,
}

impl<'a> PayloadReader<'a> {
    fn take(&mut self, count: usize) -> Result<&'a [f64]> {
        if self.cursor + count > self.floats.len() {
            return Err(AconvError::DataFormat(format!(
                "checkpoint payload ends after {} values, needed {}",
                self.floats.len(),
                self.cursor + count
            )));
        }
        let out = &self.floats[self.cursor..self.cursor + count];
        self.cursor += count;
        Ok(out)
    }
}

/// A named sequence of layers trained by one owner at a time.
#[derive(Debug, Clone, Default)]
pub struct Network {
    layers: Vec<(String, Layer)>,
}

impl Network {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, layer: Layer) {
        self.layers.push((name.into(), layer));
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Runs the network over a batch. `train` selects batch statistics and
    /// active dropout; evaluation uses running statistics and identity
    /// dropout.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        let mut cur = x.clone();
        for (name, layer) in &mut self.layers {
            cur = layer
                .forward(&cur, train)
                .map_err(|e| AconvError::Train(format!("layer {name}: {e}")))?;
        }
        Ok(cur)
    }

    /// Backpropagates through the most recent training forward pass and
    /// leaves gradients stored inside each layer.
    pub fn backward(&mut self, d_o: &Tensor) -> Result<Tensor> {
        let mut cur = d_o.clone();
        for (name, layer) in self.layers.iter_mut().rev() {
            cur = layer
                .backward(&cur)
                .map_err(|e| AconvError::Train(format!("layer {name}: {e}")))?;
        }
        Ok(cur)
    }

    /// Applies one SGD-with-momentum update from the stored gradients, then
    /// re-clips every adaptive aperture to its kernel's valid range.
    pub fn step(&mut self, lr: f64, momentum: f64, clip: f64) -> Result<()> {
        for (name, layer) in &mut self.layers {
            layer
                .step(lr, momentum, clip)
                .map_err(|e| AconvError::Train(format!("layer {name}: {e}")))?;
        }
        Ok(())
    }

    /// Number of trainable parameters (weights, biases, apertures, affine
    /// batch-norm coefficients). Running statistics are not trainable.
    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|(_, l)| l.parameter_count()).sum()
    }

    /// The adaptive layers' apertures, in network order.
    pub fn sigma_layers(&self) -> Vec<(&str, &[f64])> {
        self.layers
            .iter()
            .filter_map(|(name, l)| match l {
                Layer::Aconv(a) => Some((name.as_str(), a.params().sigmas())),
                _ => None,
            })
            .collect()
    }

    /// Every float the checkpoint persists, in checkpoint order. Two
    /// networks with equal flattened parameters behave identically.
    pub fn flatten_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, layer) in &self.layers {
            match layer {
                Layer::Aconv(l) => {
                    out.extend_from_slice(l.params.w().data());
                    out.extend_from_slice(l.params.bias());
                    out.extend_from_slice(l.params.sigmas());
                }
                Layer::Conv(l) => {
                    out.extend_from_slice(l.w.data());
                    out.extend_from_slice(&l.bias);
                }
                Layer::BatchNorm(l) => {
                    out.extend_from_slice(l.gamma());
                    out.extend_from_slice(l.beta());
                    out.extend_from_slice(l.running_mean());
                    out.extend_from_slice(l.running_var());
                }
                Layer::Dense(l) => {
                    out.extend_from_slice(l.w().data());
                    out.extend_from_slice(l.b());
                }
                Layer::Relu(_) | Layer::MaxPool(_) | Layer::Dropout(_) | Layer::Flatten(_) => {}
            }
        }
        out
    }

    /// Serializes parameters to the checkpoint container: magic, header
    /// length, JSON header (shape manifest, layer names, apertures as decimal
    /// strings), then the payloads as little-endian 64-bit floats in manifest
    /// order. Optimizer state is not part of a checkpoint.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut headers = Vec::with_capacity(self.layers.len());
        let mut floats: Vec<f64> = Vec::new();
        for (name, layer) in &self.layers {
            let mut h;
            match layer {
                Layer::Aconv(l) => {
                    h = LayerHeader::bare(name, "aconv");
                    h.padding = Some(l.padding.label().to_string());
                    h.mode = Some(mode_label(l.params.mode()).to_string());
                    h.sigmas = Some(l.params.sigmas().iter().map(|s| s.to_string()).collect());
                    h.payload.push(("w".into(), l.params.w().shape().to_vec()));
                    h.payload.push(("bias".into(), vec![l.params.bias().len()]));
                    floats.extend_from_slice(l.params.w().data());
                    floats.extend_from_slice(l.params.bias());
                }
                Layer::Conv(l) => {
                    h = LayerHeader::bare(name, "conv");
                    h.padding = Some(l.padding.label().to_string());
                    h.payload.push(("w".into(), l.w.shape().to_vec()));
                    h.payload.push(("bias".into(), vec![l.bias.len()]));
                    floats.extend_from_slice(l.w.data());
                    floats.extend_from_slice(&l.bias);
                }
                Layer::BatchNorm(l) => {
                    h = LayerHeader::bare(name, "batch_norm");
                    let f = l.features();
                    for field in ["gamma", "beta", "running_mean", "running_var"] {
                        h.payload.push((field.into(), vec![f]));
                    }
                    floats.extend_from_slice(l.gamma());
                    floats.extend_from_slice(l.beta());
                    floats.extend_from_slice(l.running_mean());
                    floats.extend_from_slice(l.running_var());
                }
                Layer::Relu(_) => h = LayerHeader::bare(name, "relu"),
                Layer::MaxPool(_) => h = LayerHeader::bare(name, "max_pool"),
                Layer::Dropout(l) => {
                    h = LayerHeader::bare(name, "dropout");
                    h.rate = Some(l.rate());
                    h.seed = Some(l.seed());
                }
                Layer::Flatten(_) => h = LayerHeader::bare(name, "flatten"),
                Layer::Dense(l) => {
                    h = LayerHeader::bare(name, "dense");
                    h.payload.push(("w".into(), l.w().shape().to_vec()));
                    h.payload.push(("b".into(), vec![l.b().len()]));
                    floats.extend_from_slice(l.w().data());
                    floats.extend_from_slice(l.b());
                }
            }
            headers.push(h);
        }
        let header = CheckpointHeader { format: CHECKPOINT_FORMAT.to_string(), layers: headers };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| AconvError::DataFormat(format!("checkpoint header: {e}")))?;
        let mut bytes =
            Vec::with_capacity(12 + header_json.len() + floats.len() * std::mem::size_of::<f64>());
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&header_json);
        for v in &floats {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Restores a network from a checkpoint file. Momentum state starts at
    /// zero and dropout streams restart from their recorded seeds.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 12 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(AconvError::DataFormat(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + header_len {
            return Err(AconvError::DataFormat(format!(
                "checkpoint truncated: header claims {header_len} bytes, file has {}",
                bytes.len() - 12
            )));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + header_len])
            .map_err(|e| AconvError::DataFormat(format!("checkpoint header: {e}")))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(AconvError::DataFormat(format!(
                "unsupported checkpoint format {:?}",
                header.format
            )));
        }
        let payload = &bytes[12 + header_len..];
        if payload.len() % 8 != 0 {
            return Err(AconvError::DataFormat(format!(
                "checkpoint payload of {} bytes is not a whole number of floats",
                payload.len()
            )));
        }
        let floats: Vec<f64> =
            payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut reader = PayloadReader { floats: &floats, cursor: 0 };

        let mut net = Network::new();
        for lh in &header.layers {
            let layer = match lh.kind.as_str() {
                "aconv" => {
                    let w_shape = lh.payload_entry("w")?.to_vec();
                    let w_len: usize = w_shape.iter().product();
                    let w = Tensor::new(&w_shape, reader.take(w_len)?.to_vec())?;
                    let b_len: usize = lh.payload_entry("bias")?.iter().product();
                    let bias = reader.take(b_len)?.to_vec();
                    let sigmas: Vec<f64> = lh
                        .sigmas
                        .as_ref()
                        .ok_or_else(|| {
                            AconvError::DataFormat(format!(
                                "adaptive layer {:?} has no aperture list",
                                lh.name
                            ))
                        })?
                        .iter()
                        .map(|s| {
                            s.parse::<f64>().map_err(|e| {
                                AconvError::DataFormat(format!("aperture {s:?}: {e}"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let mode = mode_from_label(lh.mode.as_deref().unwrap_or("normalized"))?;
                    let padding = Padding::from_label(lh.padding.as_deref().unwrap_or("valid"))?;
                    let params = AdaptiveKernelParams::new(w, bias, sigmas)?.with_mode(mode);
                    Layer::Aconv(AconvNetLayer::new(params, padding))
                }
                "conv" => {
                    let w_shape = lh.payload_entry("w")?.to_vec();
                    let w_len: usize = w_shape.iter().product();
                    let w = Tensor::new(&w_shape, reader.take(w_len)?.to_vec())?;
                    let b_len: usize = lh.payload_entry("bias")?.iter().product();
                    let bias = reader.take(b_len)?.to_vec();
                    let padding = Padding::from_label(lh.padding.as_deref().unwrap_or("valid"))?;
                    Layer::Conv(ConvNetLayer::new(w, bias, padding)?)
                }
                "batch_norm" => {
                    let f: usize = lh.payload_entry("gamma")?.iter().product();
                    let mut bn = BatchNormLayer::new(f);
                    bn.gamma_mut().copy_from_slice(reader.take(f)?);
                    let beta_len: usize = lh.payload_entry("beta")?.iter().product();
                    bn.beta_mut().copy_from_slice(reader.take(beta_len)?);
                    let rm_len: usize = lh.payload_entry("running_mean")?.iter().product();
                    bn.running_mean_mut().copy_from_slice(reader.take(rm_len)?);
                    let rv_len: usize = lh.payload_entry("running_var")?.iter().product();
                    bn.running_var_mut().copy_from_slice(reader.take(rv_len)?);
                    Layer::BatchNorm(bn)
                }
                "relu" => Layer::Relu(ReluLayer::default()),
                "max_pool" => Layer::MaxPool(MaxPool2x2Layer::default()),
                "dropout" => {
                    let rate = lh.rate.ok_or_else(|| {
                        AconvError::DataFormat(format!("dropout layer {:?} has no rate", lh.name))
                    })?;
                    Layer::Dropout(DropoutLayer::new(rate, lh.seed.unwrap_or(0))?)
                }
                "flatten" => Layer::Flatten(FlattenLayer::default()),
                "dense" => {
                    let w_shape = lh.payload_entry("w")?.to_vec();
                    let w_len: usize = w_shape.iter().product();
                    let w = Tensor::new(&w_shape, reader.take(w_len)?.to_vec())?;
                    let b_len: usize = lh.payload_entry("b")?.iter().product();
                    let b = reader.take(b_len)?.to_vec();
                    Layer::Dense(DenseLayer::from_parts(w, b)?)
                }
                other => {
                    return Err(AconvError::DataFormat(format!("unknown layer kind {other:?}")))
                }
            };
            net.push(lh.name.clone(), layer);
        }
        if reader.cursor != floats.len() {
            return Err(AconvError::DataFormat(format!(
                "checkpoint payload has {} values, manifest consumed {}",
                floats.len(),
                reader.cursor
            )));
        }
        Ok(net)
    }
}
