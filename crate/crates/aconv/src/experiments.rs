//! The experiment suite: envelope variance studies, single-layer filter
//! learning, the classifier comparison, and the overhead benchmark. Every
//! run is a pure function of its configuration and seed except for the wall
//! clock fields, which are labelled as timing and excluded from determinism
//! contracts.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, Normal};
use std::time::Instant;

use crate::data::DatasetBundle;
use crate::envelope::{envelope, make_grid, unnormalized_envelope, SigmaGradMode};
use crate::error::{AconvError, Result};
use crate::filters::{ncc, FilterBank};
use crate::layers::{aconv_backward, aconv_forward, AdaptiveKernelParams};
use crate::network::{AconvNetLayer, ConvNetLayer, Layer};
use crate::optim::{clip_sigma, init_sigmas, init_weights, sgd_momentum_step, InitScheme};
use crate::report::fmt_f64;
use crate::stats::{welch_ttest, TTestResult};
use crate::tensor::{cross_correlate, elementwise_multiply, mvar, Padding, Tensor};
use crate::train::{run_experiment, ExperimentReport, NetworkSpec, TrainConfig};

/// A deterministic grayscale test image in [0, 1]: layered sinusoids at
/// several frequencies, a handful of rectangles for sharp edges, and dense
/// noise, so that smoothing, edge, and second-derivative targets all have
/// signal to latch onto. Same `size`, same image — the generator is
/// internally seeded.
pub fn procedural_training_image(size: usize) -> Tensor {
    assert!(size >= 32, "procedural image needs size >= 32, got {size}");
    let tau = std::f64::consts::TAU;
    let mut img = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f64, y as f64);
            img[y * size + x] = 0.5
                + 0.3 * (tau * xf / 31.0).sin() * (tau * yf / 23.0).cos()
                + 0.25 * (tau * xf / 9.0).sin() * (tau * yf / 13.0).cos()
                + 0.2 * (tau * (xf + yf) / 5.0).sin();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..6 {
        let x0 = rng.gen_range(0..size - 16);
        let y0 = rng.gen_range(0..size - 16);
        let rect_w = rng.gen_range(6..16);
        let rect_h = rng.gen_range(6..16);
        let amp = rng.gen_range(-0.4..0.4);
        for y in y0..usize::min(y0 + rect_h, size) {
            for x in x0..usize::min(x0 + rect_w, size) {
                img[y * size + x] += amp;
            }
        }
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal is valid");
    for v in img.iter_mut() {
        *v += 0.3 * noise.sample(&mut rng);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &img {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    for v in img.iter_mut() {
        *v = (*v - lo) / span;
    }
    Tensor::new(&[size, size], img).expect("square image buffer matches its shape")
}

/// Configuration for the single-layer filter recovery experiment.
#[derive(Debug, Clone)]
pub struct FilterLearnConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub clip_value: f64,
    pub seed: u64,
    /// Training image `[H, W]` in [0, 1]; the built-in procedural texture
    /// when `None`. Both sides must be at least 64.
    pub image: Option<Tensor>,
    /// Also learn an identity (pass-through) target alongside the bank.
    pub include_identity: bool,
    /// Aperture gradient mode, for side-by-side comparisons.
    pub mode: SigmaGradMode,
}

impl Default for FilterLearnConfig {
    fn default() -> Self {
        Self {
            iterations: 2500,
            lr: 0.1,
            momentum: 0.9,
            clip_value: 1.0,
            seed: 0,
            image: None,
            include_identity: false,
            mode: SigmaGradMode::Normalized,
        }
    }
}

/// The layer's full state at one moment of filter learning: raw weights,
/// envelope coefficients, masked kernels (all `[9, 9]` per target, in bank
/// order), and apertures.
#[derive(Debug, Clone)]
pub struct KernelSnapshot {
    pub sigmas: Vec<f64>,
    pub w: Vec<(String, Tensor)>,
    pub u: Vec<(String, Tensor)>,
    pub product: Vec<(String, Tensor)>,
}

fn take_snapshot(params: &AdaptiveKernelParams, names: &[String]) -> Result<KernelSnapshot> {
    let (n, q) = (params.n(), params.filters());
    let evals = params.eval_envelopes()?;
    let product = params.product_kernel(&evals)?;
    let mut w = Vec::with_capacity(q);
    let mut u = Vec::with_capacity(q);
    let mut masked = Vec::with_capacity(q);
    for (qi, name) in names.iter().enumerate() {
        let mut wq = vec![0.0; n * n];
        let mut pq = vec![0.0; n * n];
        for cell in 0..n * n {
            wq[cell] = params.w().data()[cell * q + qi];
            pq[cell] = product.data()[cell * q + qi];
        }
        w.push((name.clone(), Tensor::new(&[n, n], wq)?));
        u.push((name.clone(), evals[qi].u().clone()));
        masked.push((name.clone(), Tensor::new(&[n, n], pq)?));
    }
    Ok(KernelSnapshot { sigmas: params.sigmas().to_vec(), w, u, product: masked })
}

/// Result of [`run_filter_learning`].
#[derive(Debug, Clone)]
pub struct FilterLearnReport {
    /// MSE recorded before each update, so `loss[t]` is the loss after `t`
    /// updates and `loss[0]` is the untrained loss.
    pub loss: Vec<f64>,
    /// Normalized cross-correlation between each learned masked kernel and
    /// its target, in bank order.
    pub ncc: Vec<(String, f64)>,
    /// The layer's state right after initialization.
    pub before: KernelSnapshot,
    /// The layer's state after the final update.
    pub after: KernelSnapshot,
}

/// Trains one adaptive layer to reproduce the standard 9×9 filter bank from
/// image data alone: targets are the bank's responses on the training image,
/// and the layer must recover each kernel — and an appropriate aperture —
/// from random initialization.
pub fn run_filter_learning(cfg: &FilterLearnConfig) -> Result<FilterLearnReport> {
    if cfg.iterations == 0 {
        return Err(AconvError::InvalidArgument("iterations must be at least 1".into()));
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
    let image = match &cfg.image {
        Some(img) => {
            if img.shape().len() != 2 {
                return Err(AconvError::InvalidArgument(format!(
                    "training image must be 2-dimensional, got shape {:?}",
                    img.shape()
                )));
            }
            img.clone()
        }
        None => procedural_training_image(64),
    };
    let (h, w) = (image.shape()[0], image.shape()[1]);
    if h < 64 || w < 64 {
        return Err(AconvError::InvalidArgument(format!(
            "image too small: filter recovery needs at least 64x64, got {h}x{w}"
        )));
    }

    let mut bank = FilterBank::standard();
    if cfg.include_identity {
        bank = bank.with_identity();
    }
    let n = 9usize;
    let q = bank.len();
    let x = image.reshape(&[h, w, 1])?;

    // All bank responses in one correlation: stack the targets on the filter
    // axis.
    let mut stacked = vec![0.0; n * n * q];
    for (qi, (_, kern)) in bank.kernels().iter().enumerate() {
        for cell in 0..n * n {
            stacked[cell * q + qi] = kern.data()[cell];
        }
    }
    let target_kernels = Tensor::new(&[n, n, 1, q], stacked)?;
    let targets = cross_correlate(&x, &target_kernels, 1, Padding::Same)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w0 = init_weights(&[n, n, 1, q], n * n, n * n * q, InitScheme::GlorotUniform, &mut rng)?;
    let sigmas = init_sigmas(q, 0.1, 0.5)?;
    let mut params = AdaptiveKernelParams::new(w0, vec![0.0; q], sigmas)?.with_mode(cfg.mode);
    let names: Vec<String> = bank.kernels().iter().map(|(name, _)| name.clone()).collect();
    let before = take_snapshot(&params, &names)?;

    let mut vw = vec![0.0; params.w().len()];
    let mut vsig = vec![0.0; q];
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    let inv_len = 1.0 / targets.len() as f64;
    for _ in 0..cfg.iterations {
        let (out, cache) = aconv_forward(&x, &params, Padding::Same)?;
        let mut mse = 0.0;
        let mut d = vec![0.0; out.len()];
        for (i, (&o, &t)) in out.data().iter().zip(targets.data()).enumerate() {
            let diff = o - t;
            mse += diff * diff;
            d[i] = 2.0 * diff * inv_len;
        }
        mse *= inv_len;
        loss_curve.push(mse);
        let d_o = Tensor::new(out.shape(), d)?;
        let grads = aconv_backward(&d_o, &cache)?;
        sgd_momentum_step(
            params.w_mut().data_mut(),
            grads.d_w.data(),
            &mut vw,
            cfg.lr,
            cfg.momentum,
            cfg.clip_value,
        )?;
        sgd_momentum_step(
            params.sigmas_mut(),
            &grads.d_sigmas,
            &mut vsig,
            cfg.lr,
            cfg.momentum,
            cfg.clip_value,
        )?;
        clip_sigma(params.sigmas_mut(), n);
    }

    let after = take_snapshot(&params, &names)?;
    let mut ncc_scores = Vec::with_capacity(q);
    for ((name, target), (_, learned)) in bank.kernels().iter().zip(&after.product) {
        ncc_scores.push((name.clone(), ncc(learned, target)));
    }

    Ok(FilterLearnReport { loss: loss_curve, ncc: ncc_scores, before, after })
}

/// One row of the envelope variance study: the mean per-position weight
/// variance of masked kernels (`mvar_wu`) against that of the raw kernels
/// (`mvar_w`), for one kernel size, aperture, weight distribution, and
/// masking mode.
#[derive(Debug, Clone)]
pub struct VarianceRow {
    pub n: usize,
    pub sigma: f64,
    /// Weight distribution label: `uniform` (±0.5) or `normal` (sd 0.3).
    pub dist: String,
    /// Whether the mask was the normalized envelope or the raw Gaussian.
    pub normalized: bool,
    pub mvar_w: f64,
    pub mvar_wu: f64,
    pub ratio: f64,
}

impl VarianceRow {
    pub const CSV_HEADER: [&'static str; 7] =
        ["n", "sigma", "dist", "normalized", "mvar_w", "mvar_wu", "ratio"];

    pub fn to_csv_row(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_f64(self.sigma),
            self.dist.clone(),
            self.normalized.to_string(),
            fmt_f64(self.mvar_w),
            fmt_f64(self.mvar_wu),
            fmt_f64(self.ratio),
        ]
    }
}

/// Monte-Carlo check that the normalized envelope preserves the mean weight
/// variance while the raw Gaussian mask suppresses it. For each kernel size,
/// aperture, and weight distribution, one batch of `samples` random kernels
/// is drawn and masked both ways, sharing the draw so the two rows differ
/// only in the mask.
pub fn run_variance_study(
    n_list: &[usize],
    sigmas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<VarianceRow>> {
    if samples < 1000 {
        return Err(AconvError::InvalidArgument(format!(
            "variance estimates need at least 1000 samples, got {samples}"
        )));
    }
    if n_list.is_empty() || sigmas.is_empty() {
        return Err(AconvError::InvalidArgument(
            "variance study needs at least one kernel size and one sigma".into(),
        ));
    }
    let normal = Normal::new(0.0, 0.3)
        .map_err(|e| AconvError::InvalidArgument(format!("bad normal parameters: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &n in n_list {
        let grid = make_grid(n)?;
        for &sigma in sigmas {
            let ev = envelope(&grid, sigma)?;
            let raw = unnormalized_envelope(&grid, sigma)?;
            for dist in ["uniform", "normal"] {
                let mut draws = vec![0.0; n * n * samples];
                match dist {
                    "uniform" => {
                        for v in draws.iter_mut() {
                            *v = rng.gen_range(-0.5..0.5);
                        }
                    }
                    _ => {
                        for v in draws.iter_mut() {
                            *v = normal.sample(&mut rng);
                        }
                    }
                }
                let w = Tensor::new(&[n, n, samples], draws)?;
                let mvar_w = mvar(&w)?;
                for (normalized, mask) in [(true, ev.u()), (false, &raw)] {
                    let wu = elementwise_multiply(&w, mask)?;
                    let mvar_wu = mvar(&wu)?;
                    rows.push(VarianceRow {
                        n,
                        sigma,
                        dist: dist.to_string(),
                        normalized,
                        mvar_w,
                        mvar_wu,
                        ratio: mvar_wu / mvar_w,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// One classifier training run within a comparison: which variant, which
/// kernel size, and the full experiment report.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    /// `"conv"` for the plain baseline, `"aconv"` for the adaptive variant.
    pub variant: String,
    pub size: usize,
    pub report: ExperimentReport,
}

/// Result of [`run_classifier_comparison`].
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub runs: Vec<ComparisonRun>,
    /// The kernel size with the highest mean adaptive peak accuracy (first
    /// such size on ties, in the requested order).
    pub best_size: usize,
    /// Welch's t-test on peak accuracies, adaptive vs. baseline at
    /// `best_size`; `None` when there are fewer than two repeats.
    pub ttest: Option<TTestResult>,
}

impl ComparisonReport {
    /// Mean peak test accuracy across repeats for one variant and size.
    pub fn mean_peak(&self, variant: &str, size: usize) -> Option<f64> {
        self.runs.iter().find(|r| r.variant == variant && r.size == size).map(|r| {
            let peaks = &r.report.best_test_results;
            peaks.iter().sum::<f64>() / peaks.len() as f64
        })
    }
}

/// Header for the per-repeat comparison CSV.
pub const COMPARISON_CSV_HEADER: [&str; 4] = ["variant", "size", "repeat", "best_acc"];

/// One CSV row per (variant, size, repeat) with its peak test accuracy.
pub fn comparison_csv_rows(cmp: &ComparisonReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for run in &cmp.runs {
        for (rep, &peak) in run.report.best_test_results.iter().enumerate() {
            rows.push(vec![
                run.variant.clone(),
                run.size.to_string(),
                rep.to_string(),
                fmt_f64(peak),
            ]);
        }
    }
    rows
}

/// Trains the two-block classifier in both variants at each kernel size
/// under identical settings and compares peak test accuracies. Both variants
/// of a size share the architecture exactly except for the envelope mask and
/// its apertures.
pub fn run_classifier_comparison(
    data: &DatasetBundle,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<ComparisonReport> {
    if sizes.is_empty() {
        return Err(AconvError::InvalidArgument(
            "comparison needs at least one kernel size".into(),
        ));
    }
    let mut runs = Vec::with_capacity(sizes.len() * 2);
    for &size in sizes {
        for adaptive in [false, true] {
            let spec = NetworkSpec::SimpleClassifier { kernel_size: size, adaptive };
            let report = run_experiment(&spec, data, cfg)?;
            runs.push(ComparisonRun {
                variant: if adaptive { "aconv" } else { "conv" }.to_string(),
                size,
                report,
            });
        }
    }

    let mean_of = |variant: &str, size: usize| -> f64 {
        runs.iter()
            .find(|r| r.variant == variant && r.size == size)
            .map(|r| {
                let peaks = &r.report.best_test_results;
                peaks.iter().sum::<f64>() / peaks.len() as f64
            })
            .expect("every requested size was run in both variants")
    };
    let mut best_size = sizes[0];
    let mut best_mean = f64::NEG_INFINITY;
    for &size in sizes {
        let mean = mean_of("aconv", size);
        if mean > best_mean {
            best_mean = mean;
            best_size = size;
        }
    }

    let ttest = if cfg.repeats >= 2 {
        let a = runs
            .iter()
            .find(|r| r.variant == "aconv" && r.size == best_size)
            .expect("best size has an adaptive run");
        let c = runs
            .iter()
            .find(|r| r.variant == "conv" && r.size == best_size)
            .expect("best size has a baseline run");
        Some(welch_ttest(&a.report.best_test_results, &c.report.best_test_results)?)
    } else {
        None
    };

    Ok(ComparisonReport { runs, best_size, ttest })
}

/// One row of the overhead benchmark: median wall time per optimization step
/// for the plain and adaptive layers at one kernel and input size.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n: usize,
    pub input_size: usize,
    pub batch: usize,
    pub conv_ms: f64,
    pub aconv_ms: f64,
    /// `aconv_ms / conv_ms`.
    pub ratio: f64,
}

impl BenchRow {
    pub const CSV_HEADER: [&'static str; 6] =
        ["n", "input_size", "batch", "conv_ms", "aconv_ms", "ratio"];

    pub fn to_csv_row(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            self.input_size.to_string(),
            self.batch.to_string(),
            fmt_f64(self.conv_ms),
            fmt_f64(self.aconv_ms),
            fmt_f64(self.ratio),
        ]
    }
}

fn median_step_ms(
    layer: &mut Layer,
    x: &Tensor,
    d_o: &Tensor,
    warmup: usize,
    batches: usize,
) -> Result<f64> {
    let mut times = Vec::with_capacity(batches);
    for i in 0..warmup + batches {
        let t0 = Instant::now();
        let _ = layer.forward(x, true)?;
        let _ = layer.backward(d_o)?;
        layer.step(0.01, 0.9, 1.0)?;
        let elapsed = t0.elapsed().as_secs_f64() * 1e3;
        if i >= warmup {
            times.push(elapsed);
        }
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("wall times are finite"));
    Ok(times[times.len() / 2])
}

/// Measures the wall-time overhead of the adaptive layer over the plain
/// baseline: one full optimization step (forward, backward, update) on a
/// 2-item batch with 4 input and 4 output channels, at each kernel and
/// input size. Both layers share the same weight draw. Returns the median
/// over `batches` timed steps after `warmup` untimed ones; zero batches
/// yields no rows.
pub fn run_overhead_benchmark(
    n_list: &[usize],
    input_sizes: &[usize],
    batches: usize,
    warmup: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if batches == 0 {
        return Ok(Vec::new());
    }
    if warmup < 3 {
        return Err(AconvError::InvalidArgument(format!(
            "timings need at least 3 warmup steps, got {warmup}"
        )));
    }
    if n_list.is_empty() || input_sizes.is_empty() {
        return Err(AconvError::InvalidArgument(
            "benchmark needs at least one kernel size and one input size".into(),
        ));
    }
    const BATCH: usize = 2;
    const CHANNELS: usize = 4;
    const FILTERS: usize = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n_list.len() * input_sizes.len());
    for &n in n_list {
        for &size in input_sizes {
            if size == 0 {
                return Err(AconvError::InvalidArgument("input size must be positive".into()));
            }
            let mut x = Tensor::zeros(&[BATCH, size, size, CHANNELS]);
            for v in x.data_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
            let mut d_o = Tensor::zeros(&[BATCH, size, size, FILTERS]);
            for v in d_o.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let w = init_weights(
                &[n, n, CHANNELS, FILTERS],
                n * n * CHANNELS,
                n * n * FILTERS,
                InitScheme::GlorotUniform,
                &mut rng,
            )?;
            let mut conv =
                Layer::Conv(ConvNetLayer::new(w.clone(), vec![0.0; FILTERS], Padding::Same)?);
            let params =
                AdaptiveKernelParams::new(w, vec![0.0; FILTERS], init_sigmas(FILTERS, 0.1, 0.5)?)?;
            let mut aconv = Layer::Aconv(AconvNetLayer::new(params, Padding::Same));
            let conv_ms = median_step_ms(&mut conv, &x, &d_o, warmup, batches)?;
            let aconv_ms = median_step_ms(&mut aconv, &x, &d_o, warmup, batches)?;
            rows.push(BenchRow {
                n,
                input_size: size,
                batch: BATCH,
                conv_ms,
                aconv_ms,
                ratio: aconv_ms / conv_ms,
            });
        }
    }
    Ok(rows)
}
