//! The training loop: network specs, configuration, and the repeatable
//! experiment runner. A repeat is a fully isolated job — its own seed, its
//! own parameters — and every float in the report is a pure function of the
//! dataset and the configuration.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use serde::Serialize;
use std::time::Instant;

use crate::data::DatasetBundle;
use crate::error::{AconvError, Result};
use crate::layers::{
    softmax_crossentropy, AdaptiveKernelParams, BatchNormLayer, DenseLayer, DropoutLayer,
    FlattenLayer, MaxPool2x2Layer, ReluLayer,
};
use crate::network::{AconvNetLayer, ConvNetLayer, Layer, Network};
use crate::optim::{init_sigmas, init_weights, InitScheme, PlateauScheduler};
use crate::tensor::{Padding, Tensor};

/// Training hyperparameters. The defaults are the desk-scale settings used
/// throughout the experiment suite.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub repeats: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_value: f64,
    /// Initial apertures are spread evenly across this (lo, hi) range.
    pub sigma_init: (f64, f64),
    pub seed: u64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            repeats: 3,
            epochs: 15,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            clip_value: 1.0,
            sigma_init: (0.1, 0.5),
            seed: 0,
            plateau_factor: 0.9,
            plateau_patience: 10,
        }
    }
}

/// Network architectures available to experiments. Each has an adaptive
/// variant (envelope-masked kernels with trainable apertures) and a plain
/// convolution baseline that is identical except for the envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "arch")]
pub enum NetworkSpec {
    /// Two convolution blocks (32 filters each, batch norm, ReLU), one 2×2
    /// max-pool, then a 256-unit dense head with dropout on both sides.
    SimpleClassifier { kernel_size: usize, adaptive: bool },
    /// One 3×3 convolution block (8 filters) and a linear head; for fast
    /// tests on synthetic data.
    TinyClassifier { adaptive: bool },
}

impl NetworkSpec {
    pub fn is_adaptive(&self) -> bool {
        match *self {
            NetworkSpec::SimpleClassifier { adaptive, .. } => adaptive,
            NetworkSpec::TinyClassifier { adaptive } => adaptive,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            NetworkSpec::SimpleClassifier { kernel_size, adaptive } => {
                format!("simple_{}_k{kernel_size}", if adaptive { "aconv" } else { "conv" })
            }
            NetworkSpec::TinyClassifier { adaptive } => {
                format!("tiny_{}", if adaptive { "aconv" } else { "conv" })
            }
        }
    }
}

fn conv_block_layer(
    adaptive: bool,
    n: usize,
    c: usize,
    q: usize,
    sigma_init: (f64, f64),
    padding: Padding,
    rng: &mut ChaCha8Rng,
) -> Result<Layer> {
    let w = init_weights(&[n, n, c, q], n * n * c, n * n * q, InitScheme::GlorotUniform, rng)?;
    let bias = vec![0.0; q];
    if adaptive {
        let sigmas = init_sigmas(q, sigma_init.0, sigma_init.1)?;
        let params = AdaptiveKernelParams::new(w, bias, sigmas)?;
        Ok(Layer::Aconv(AconvNetLayer::new(params, padding)))
    } else {
        Ok(Layer::Conv(ConvNetLayer::new(w, bias, padding)?))
    }
}

fn build_network(
    spec: &NetworkSpec,
    dims: (usize, usize, usize),
    classes: usize,
    sigma_init: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Network> {
    let (h, w, c) = dims;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(AconvError::InvalidArgument(format!(
            "these architectures pool once, so image sides must be even, got {h}x{w}"
        )));
    }
    let mut net = Network::new();
    match *spec {
        NetworkSpec::SimpleClassifier { kernel_size, adaptive } => {
            if kernel_size == 0 {
                return Err(AconvError::InvalidArgument("kernel size must be positive".into()));
            }
            let q = 32;
            let prefix = if adaptive { "aconv" } else { "conv" };
            net.push(
                format!("{prefix}1"),
                conv_block_layer(adaptive, kernel_size, c, q, sigma_init, Padding::Same, rng)?,
            );
            net.push("bn1", Layer::BatchNorm(BatchNormLayer::new(q)));
            net.push("relu1", Layer::Relu(ReluLayer::default()));
            net.push(
                format!("{prefix}2"),
                conv_block_layer(adaptive, kernel_size, q, q, sigma_init, Padding::Same, rng)?,
            );
            net.push("bn2", Layer::BatchNorm(BatchNormLayer::new(q)));
            net.push("relu2", Layer::Relu(ReluLayer::default()));
            net.push("pool", Layer::MaxPool(MaxPool2x2Layer::default()));
            net.push("drop1", Layer::Dropout(DropoutLayer::new(0.5, rng.gen())?));
            net.push("flatten", Layer::Flatten(FlattenLayer::default()));
            let flat = (h / 2) * (w / 2) * q;
            net.push("dense1", Layer::Dense(DenseLayer::new(flat, 256, rng)));
            net.push("bn3", Layer::BatchNorm(BatchNormLayer::new(256)));
            net.push("relu3", Layer::Relu(ReluLayer::default()));
            net.push("drop2", Layer::Dropout(DropoutLayer::new(0.5, rng.gen())?));
            net.push("dense2", Layer::Dense(DenseLayer::new(256, classes, rng)));
        }
        NetworkSpec::TinyClassifier { adaptive } => {
            let q = 8;
            let prefix = if adaptive { "aconv" } else { "conv" };
            net.push(
                format!("{prefix}1"),
                conv_block_layer(adaptive, 3, c, q, sigma_init, Padding::Same, rng)?,
            );
            net.push("bn1", Layer::BatchNorm(BatchNormLayer::new(q)));
            net.push("relu1", Layer::Relu(ReluLayer::default()));
            net.push("pool", Layer::MaxPool(MaxPool2x2Layer::default()));
            net.push("flatten", Layer::Flatten(FlattenLayer::default()));
            let flat = (h / 2) * (w / 2) * q;
            net.push("dense1", Layer::Dense(DenseLayer::new(flat, classes, rng)));
        }
    }
    Ok(net)
}

/// Builds the network a given spec would train on a given dataset, seeded
/// deterministically — the same initialization the first repeat of
/// [`run_experiment`] sees.
pub fn build_network_for(spec: &NetworkSpec, data: &DatasetBundle, seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_network(spec, data.image_dims(), data.class_count, (0.1, 0.5), &mut rng)
}

/// One epoch's summary, recorded after its evaluation pass.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Mean aperture per adaptive layer, in network order (empty for the
    /// plain baseline).
    pub mean_sigmas: Vec<f64>,
}

/// One aperture observation: layer, filter, epoch, value.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaSample {
    pub epoch: usize,
    pub layer: String,
    pub filter: usize,
    pub sigma: f64,
}

/// Everything one repeat produced.
#[derive(Debug, Clone, Serialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub epochs: Vec<EpochRecord>,
    pub sigma_trajectory: Vec<SigmaSample>,
    /// Peak test accuracy over the completed epochs.
    pub best_acc: f64,
    /// A divergence diagnostic if the repeat stopped early.
    pub aborted: Option<String>,
    /// Mean wall time per optimization step in milliseconds (informational;
    /// not part of any determinism contract).
    pub step_time_ms: f64,
}

/// The full result of [`run_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub label: String,
    /// Names of the adaptive layers whose mean apertures appear in each
    /// epoch record.
    pub sigma_layer_names: Vec<String>,
    pub repeats: Vec<RepeatReport>,
    /// Peak test accuracy per repeat.
    pub best_test_results: Vec<f64>,
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    let item: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * item);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * item..(i + 1) * item]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(&shape, data).expect("gathered items preserve the item shape")
}

/// Accuracy and mean loss over a labeled set, evaluated in chunks.
pub fn evaluate(net: &mut Network, x: &Tensor, y: &[usize]) -> Result<(f64, f64)> {
    let n = x.shape()[0];
    if n != y.len() {
        return Err(AconvError::ShapeMismatch(format!("{n} items but {} labels", y.len())));
    }
    let item: usize = x.shape()[1..].iter().product();
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let mut start = 0;
    while start < n {
        let end = usize::min(start + 64, n);
        let bs = end - start;
        let mut shape = x.shape().to_vec();
        shape[0] = bs;
        let xb = Tensor::new(&shape, x.data()[start * item..end * item].to_vec())?;
        let logits = net.forward(&xb, false)?;
        let (l, _) = softmax_crossentropy(&logits, &y[start..end])?;
        loss_sum += l * bs as f64;
        let k = logits.shape()[1];
        for (bi, &label) in y[start..end].iter().enumerate() {
            let row = &logits.data()[bi * k..(bi + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((correct as f64 / n as f64, loss_sum / n as f64))
}

fn validate_config(cfg: &TrainConfig, data: &DatasetBundle) -> Result<()> {
    if cfg.epochs == 0 {
        return Err(AconvError::InvalidArgument("epochs must be at least 1".into()));
    }
    if cfg.repeats == 0 {
        return Err(AconvError::InvalidArgument("repeats must be at least 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(AconvError::InvalidArgument("batch size must be at least 1".into()));
    }
    let ntrain = data.train_x.shape()[0];
    if cfg.batch_size > ntrain {
        return Err(AconvError::InvalidArgument(format!(
            "dataset too small for batch size: {ntrain} training items < batch {}",
            cfg.batch_size
        )));
    }
    if !(cfg.lr > 0.0) || !cfg.lr.is_finite() {
        return Err(AconvError::InvalidArgument(format!(
            "learning rate must be positive and finite, got {}",
            cfg.lr
        )));
    }
    if !(0.0..1.0).contains(&cfg.momentum) {
        return Err(AconvError::InvalidArgument(format!(
            "momentum must be in [0,1), got {}",
            cfg.momentum
        )));
    }
    if !(cfg.clip_value > 0.0) {
        return Err(AconvError::InvalidArgument(format!(
            "gradient clip must be positive, got {}",
            cfg.clip_value
        )));
    }
    Ok(())
}

/// Trains `cfg.repeats` isolated repeats of the spec on the bundle and
/// reports per-epoch records, aperture trajectories, and peak test
/// accuracies. A repeat whose training loss goes non-finite, or whose update
/// hits a non-finite gradient, is aborted with a diagnostic; the remaining
/// repeats still run.
pub fn run_experiment(
    spec: &NetworkSpec,
    data: &DatasetBundle,
    cfg: &TrainConfig,
) -> Result<ExperimentReport> {
    validate_config(cfg, data)?;
    let dims = data.image_dims();
    let ntrain = data.train_x.shape()[0];

    let mut repeats = Vec::with_capacity(cfg.repeats);
    let mut best_test_results = Vec::with_capacity(cfg.repeats);
    let mut sigma_layer_names: Vec<String> = Vec::new();

    for rep in 0..cfg.repeats {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(rep as u64));
        let mut net = build_network(spec, dims, data.class_count, cfg.sigma_init, &mut rng)?;
        if rep == 0 {
            sigma_layer_names =
                net.sigma_layers().iter().map(|(name, _)| name.to_string()).collect();
        }
        let mut sched =
            PlateauScheduler::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience);
        let mut epoch_records = Vec::with_capacity(cfg.epochs);
        let mut trajectory = Vec::new();
        let mut aborted = None;
        let mut best_acc = 0.0f64;
        let mut step_ms_total = 0.0;
        let mut steps_done = 0usize;

        'epochs: for epoch in 0..cfg.epochs {
            let lr = sched.lr();
            let mut idx: Vec<usize> = (0..ntrain).collect();
            idx.shuffle(&mut rng);
            let mut loss_weighted = 0.0;
            for chunk in idx.chunks(cfg.batch_size) {
                let xb = gather(&data.train_x, chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| data.train_y[i]).collect();
                let t0 = Instant::now();
                let logits = net.forward(&xb, true)?;
                let (loss, grad) = softmax_crossentropy(&logits, &yb)?;
                if !loss.is_finite() {
                    aborted = Some(format!(
                        "non-finite training loss {loss} at epoch {epoch} (repeat {rep})"
                    ));
                    break 'epochs;
                }
                net.backward(&grad)?;
                if let Err(e) = net.step(lr, cfg.momentum, cfg.clip_value) {
                    aborted = Some(format!("{e} at epoch {epoch} (repeat {rep})"));
                    break 'epochs;
                }
                step_ms_total += t0.elapsed().as_secs_f64() * 1e3;
                steps_done += 1;
                loss_weighted += loss * chunk.len() as f64;
            }
            let train_loss = loss_weighted / ntrain as f64;
            let (val_acc, val_loss) = evaluate(&mut net, &data.test_x, &data.test_y)?;
            best_acc = best_acc.max(val_acc);
            let mut mean_sigmas = Vec::new();
            for (layer_name, sigmas) in net.sigma_layers() {
                mean_sigmas.push(sigmas.iter().sum::<f64>() / sigmas.len() as f64);
                for (filter, &sigma) in sigmas.iter().enumerate() {
                    trajectory.push(SigmaSample {
                        epoch,
                        layer: layer_name.to_string(),
                        filter,
                        sigma,
                    });
                }
            }
            epoch_records.push(EpochRecord { epoch, train_loss, val_acc, val_loss, lr, mean_sigmas });
            sched.observe(val_loss);
        }

        let step_time_ms = if steps_done > 0 { step_ms_total / steps_done as f64 } else { 0.0 };
        best_test_results.push(best_acc);
        repeats.push(RepeatReport {
            repeat: rep,
            epochs: epoch_records,
            sigma_trajectory: trajectory,
            best_acc,
            aborted,
            step_time_ms,
        });
    }

    Ok(ExperimentReport {
        label: spec.label(),
        sigma_layer_names,
        repeats,
        best_test_results,
    })
}
