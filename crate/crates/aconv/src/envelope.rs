//! The normalized Gaussian envelope over a kernel grid and its analytic
//! derivative with respect to the aperture σ.
//!
//! Coefficients are evaluated on cell-center coordinates g = ((k+0.5)/n,
//! (l+0.5)/n) with the center μ fixed at (0.5, 0.5), so the envelope is
//! exactly symmetric for both odd and even n. The raw Gaussian
//! e = exp(−‖g−μ‖²/(2σ²)) is rescaled by s = n/√(Σe²), which forces
//! Σu² = n² and thereby preserves the mean of the weight variances when the
//! envelope masks a random kernel.
//!
//! The derivative is taken through the normalizer: with ė = e·d²/σ³ and
//! ṡ = −s·(Σeė)/(Σe²), the coefficient derivative is u̇ = ṡ·e + s·ė. A
//! scale-frozen mode (s treated as constant, u̇ = s·ė) is exposed for
//! comparison; the forward value is identical in both modes.

use crate::error::{AconvError, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Normalized grid coordinates and cached squared distances for one kernel
/// side length.
#[derive(Debug, Clone)]
pub struct EnvelopeGrid {
    n: usize,
    coords: Vec<(f64, f64)>,
    mu: (f64, f64),
    dist2: Vec<f64>,
}

impl EnvelopeGrid {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell-center coordinates, row-major over (k, l).
    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn mu(&self) -> (f64, f64) {
        self.mu
    }

    /// Squared distances ‖g − μ‖² per cell, row-major.
    pub fn dist2(&self) -> &[f64] {
        &self.dist2
    }
}

/// Builds the normalized cell-center grid for a kernel of side `n`.
pub fn make_grid(n: usize) -> Result<EnvelopeGrid> {
    if n == 0 {
        return Err(AconvError::InvalidArgument("kernel size must be at least 1".into()));
    }
    let mu = (0.5, 0.5);
    let mut coords = Vec::with_capacity(n * n);
    let mut dist2 = Vec::with_capacity(n * n);
    for k in 0..n {
        for l in 0..n {
            let gk = (k as f64 + 0.5) / n as f64;
            let gl = (l as f64 + 0.5) / n as f64;
            coords.push((gk, gl));
            let (dk, dl) = (gk - mu.0, gl - mu.1);
            dist2.push(dk * dk + dl * dl);
        }
    }
    Ok(EnvelopeGrid { n, coords, mu, dist2 })
}

/// How the σ-derivative treats the normalizer s(σ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaGradMode {
    /// Differentiate the normalized coefficients (product rule through s).
    Normalized,
    /// Treat s as a constant: u̇ = s·e·d²/σ³. The forward value is the same;
    /// only the gradient differs. Kept for side-by-side comparisons.
    ScaleFrozen,
}

/// One envelope evaluation: coefficients, their σ-derivative, the normalizer,
/// and the aperture that produced them. Immutable once built.
#[derive(Debug, Clone)]
pub struct EnvelopeEval {
    u: Tensor,
    du_dsigma: Tensor,
    scale: f64,
    sigma: f64,
}

impl EnvelopeEval {
    /// Normalized coefficients, shape [n, n]; Σu² = n².
    pub fn u(&self) -> &Tensor {
        &self.u
    }

    /// d(u)/d(σ), shape [n, n].
    pub fn du_dsigma(&self) -> &Tensor {
        &self.du_dsigma
    }

    /// The normalizer s = n/√(Σe²).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Normalized envelope with the full (normalizer-aware) derivative.
pub fn envelope(grid: &EnvelopeGrid, sigma: f64) -> Result<EnvelopeEval> {
    envelope_with_mode(grid, sigma, SigmaGradMode::Normalized)
}

/// Normalized envelope with an explicit derivative mode.
pub fn envelope_with_mode(
    grid: &EnvelopeGrid,
    sigma: f64,
    mode: SigmaGradMode,
) -> Result<EnvelopeEval> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(AconvError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let n = grid.n();
    let cells = n * n;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let inv_sigma_cubed = 1.0 / (sigma * sigma * sigma);

    let mut e = vec![0.0; cells];
    let mut e_dot = vec![0.0; cells];
    let mut sum_sq = 0.0;
    let mut sum_e_edot = 0.0;
    for (i, &d2) in grid.dist2().iter().enumerate() {
        let ei = (-d2 * inv_two_sigma_sq).exp();
        let di = ei * d2 * inv_sigma_cubed;
        e[i] = ei;
        e_dot[i] = di;
        sum_sq += ei * ei;
        sum_e_edot += ei * di;
    }
    let scale = n as f64 / sum_sq.sqrt();
    let scale_dot = -scale * sum_e_edot / sum_sq;

    let mut u = vec![0.0; cells];
    let mut du = vec![0.0; cells];
    for i in 0..cells {
        u[i] = scale * e[i];
        du[i] = match mode {
            SigmaGradMode::Normalized => scale_dot * e[i] + scale * e_dot[i],
            SigmaGradMode::ScaleFrozen => scale * e_dot[i],
        };
    }
    Ok(EnvelopeEval {
        u: Tensor::new(&[n, n], u)?,
        du_dsigma: Tensor::new(&[n, n], du)?,
        scale,
        sigma,
    })
}

/// The raw Gaussian mask e = exp(−d²/(2σ²)) without normalization, shape
/// [n, n]. Used to demonstrate why the normalizer is necessary.
pub fn unnormalized_envelope(grid: &EnvelopeGrid, sigma: f64) -> Result<Tensor> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(AconvError::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let data: Vec<f64> = grid.dist2().iter().map(|&d2| (-d2 * inv_two_sigma_sq).exp()).collect();
    Tensor::new(&[grid.n(), grid.n()], data)
}

/// Compares the analytic σ-derivative against central finite differences of
/// the normalized coefficients and returns the worst error, max over cells
/// of |analytic − fd| / max(1, |analytic|, |fd|) — relative where the
/// derivative is large, absolute near its zero crossings, where central
/// differences are noise-limited and a pure ratio would be meaningless.
pub fn envelope_gradient_fd_check(grid: &EnvelopeGrid, sigma: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !(sigma > 2.0 * eps) {
        return Err(AconvError::InvalidArgument(format!(
            "need sigma > 2·eps > 0, got sigma {sigma}, eps {eps}"
        )));
    }
    let ev = envelope(grid, sigma)?;
    let plus = envelope(grid, sigma + eps)?;
    let minus = envelope(grid, sigma - eps)?;
    let mut worst = 0.0f64;
    for i in 0..grid.n() * grid.n() {
        let fd = (plus.u().data()[i] - minus.u().data()[i]) / (2.0 * eps);
        let ana = ev.du_dsigma().data()[i];
        let err = (ana - fd).abs() / fd.abs().max(ana.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
