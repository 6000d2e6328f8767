//! SGD with momentum and elementwise gradient clipping, aperture clamping,
//! parameter initialization schemes, and the plateau learning-rate schedule.

use crate::error::{AconvError, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One SGD step with momentum: g is clipped elementwise to
/// [−clip_value, +clip_value], then v′ = m·v − lr·g and p += v′.
pub fn sgd_momentum_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    clip_value: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(AconvError::ShapeMismatch(format!(
            "sgd buffers disagree: {} params, {} grads, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if !(lr > 0.0) {
        return Err(AconvError::InvalidArgument(format!("learning rate must be positive: {lr}")));
    }
    for (i, &g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(AconvError::Train(format!("non-finite gradient {g} at index {i}")));
        }
        let clipped = g.clamp(-clip_value, clip_value);
        velocity[i] = momentum * velocity[i] - lr * clipped;
        params[i] += velocity[i];
    }
    Ok(())
}

/// Clamps every aperture into [1/n, n]; applied after each optimizer step.
pub fn clip_sigma(sigmas: &mut [f64], n: usize) {
    debug_assert!(n >= 1);
    let (lo, hi) = (1.0 / n as f64, n as f64);
    for s in sigmas.iter_mut() {
        *s = s.clamp(lo, hi);
    }
}

/// Q linearly spaced apertures from `lo` to `hi` inclusive; a single filter
/// receives the midpoint.
pub fn init_sigmas(q: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if q == 0 {
        return Err(AconvError::InvalidArgument("need at least one filter".into()));
    }
    if !(lo < hi) {
        return Err(AconvError::InvalidArgument(format!(
            "sigma range must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if q == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    Ok((0..q).map(|i| lo + (hi - lo) * i as f64 / (q - 1) as f64).collect())
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Uniform on ±√(6/(fan_in + fan_out)).
    GlorotUniform,
    /// Normal with variance 2/fan_in.
    HeNormal,
}

/// Zero-mean random weights with the scheme's variance. Fan counts are the
/// caller's responsibility (for a convolution kernel: n²·C in, n²·Q out).
pub fn init_weights(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    scheme: InitScheme,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if fan_in == 0 || fan_out == 0 {
        return Err(AconvError::InvalidArgument("fan counts must be positive".into()));
    }
    let len: usize = shape.iter().product();
    let data: Vec<f64> = match scheme {
        InitScheme::GlorotUniform => {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
        }
        InitScheme::HeNormal => {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                .map_err(|e| AconvError::InvalidArgument(e.to_string()))?;
            (0..len).map(|_| normal.sample(rng)).collect()
        }
    };
    Tensor::new(shape, data)
}

/// Reduce-on-plateau schedule: multiplies the learning rate by `factor` when
/// the observed validation loss has not improved for `patience` consecutive
/// epochs; an improvement resets the counter, and so does a reduction.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self { lr, factor, patience, best: f64::INFINITY, stale: 0 }
    }

    /// Records one epoch's validation loss and returns the learning rate to
    /// use from now on.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        if val_loss < self.best {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr *= self.factor;
                self.stale = 0;
            }
        }
        self.lr
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
}
