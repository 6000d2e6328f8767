//! The adaptive convolution layer (envelope-masked kernel) and the ordinary
//! convolution baseline, as pure functions over single inputs.
//!
//! The forward pass is literally the composition of the public primitives:
//! evaluate the envelope per filter, mask the weights by broadcast Hadamard
//! product, cross-correlate, add bias. The backward pass reuses the cached
//! envelope evaluations so gradient and forward value always correspond to
//! the same coefficients.

use crate::envelope::{envelope_with_mode, make_grid, EnvelopeEval, EnvelopeGrid, SigmaGradMode};
use crate::error::{AconvError, Result};
use crate::tensor::{correlate_core, cross_correlate, elementwise_multiply, Padding, Tensor};

/// Parameters of one adaptive convolution layer: weights `[n,n,C,Q]`, one
/// bias and one aperture per filter, and the grid the envelope lives on.
#[derive(Debug, Clone)]
pub struct AdaptiveKernelParams {
    w: Tensor,
    bias: Vec<f64>,
    sigmas: Vec<f64>,
    grid: EnvelopeGrid,
    mode: SigmaGradMode,
}

impl AdaptiveKernelParams {
    pub fn new(w: Tensor, bias: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        if w.shape().len() != 4 || w.shape()[0] != w.shape()[1] {
            return Err(AconvError::ShapeMismatch(format!(
                "weights must be [n,n,C,Q], got {:?}",
                w.shape()
            )));
        }
        let q = w.shape()[3];
        if bias.len() != q || sigmas.len() != q {
            return Err(AconvError::ShapeMismatch(format!(
                "{q} filters need {q} biases and apertures, got {} and {}",
                bias.len(),
                sigmas.len()
            )));
        }
        if let Some(v) = w.data().iter().find(|v| !v.is_finite()) {
            return Err(AconvError::InvalidArgument(format!("non-finite weight {v}")));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(AconvError::InvalidArgument(format!("aperture must be positive, got {s}")));
        }
        let grid = make_grid(w.shape()[0])?;
        Ok(Self { w, bias, sigmas, grid, mode: SigmaGradMode::Normalized })
    }

    pub fn with_mode(mut self, mode: SigmaGradMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn n(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.w.shape()[3]
    }

    pub fn w(&self) -> &Tensor {
        &self.w
    }

    pub fn w_mut(&mut self) -> &mut Tensor {
        &mut self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn sigmas_mut(&mut self) -> &mut [f64] {
        &mut self.sigmas
    }

    pub fn grid(&self) -> &EnvelopeGrid {
        &self.grid
    }

    pub fn mode(&self) -> SigmaGradMode {
        self.mode
    }

    /// Envelope evaluations for the current apertures, one per filter.
    pub(crate) fn eval_envelopes(&self) -> Result<Vec<EnvelopeEval>> {
        self.sigmas.iter().map(|&s| envelope_with_mode(&self.grid, s, self.mode)).collect()
    }

    /// The masked product kernel W∘U as `[n,n,C,Q]`, built by broadcasting
    /// each filter's envelope over the channel axis.
    pub(crate) fn product_kernel(&self, evals: &[EnvelopeEval]) -> Result<Tensor> {
        let (n, q) = (self.n(), self.filters());
        let mut ubank = Tensor::zeros(&[n, n, 1, q]);
        for (qi, ev) in evals.iter().enumerate() {
            for cell in 0..n * n {
                ubank.data_mut()[cell * q + qi] = ev.u().data()[cell];
            }
        }
        elementwise_multiply(&self.w, &ubank)
    }
}

/// Gradients of one adaptive layer: same shapes as the parameters plus the
/// input gradient for backpropagation.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_w: Tensor,
    pub d_bias: Vec<f64>,
    pub d_sigmas: Vec<f64>,
    pub d_x: Tensor,
}

/// Everything the backward pass needs, captured at forward time: the input,
/// the product kernel, the weight snapshot, and the envelope evaluations
/// (so the gradient is taken at exactly the coefficients used forward).
#[derive(Debug, Clone)]
pub struct AconvCache {
    x: Tensor,
    padding: Padding,
    product: Tensor,
    w: Tensor,
    evals: Vec<EnvelopeEval>,
    out_shape: Vec<usize>,
}

fn add_bias(o: &mut Tensor, bias: &[f64]) {
    let q = bias.len();
    for chunk in o.data_mut().chunks_exact_mut(q) {
        for (v, b) in chunk.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Forward pass of the adaptive layer: envelope → mask → correlate → bias.
pub fn aconv_forward(
    x: &Tensor,
    params: &AdaptiveKernelParams,
    padding: Padding,
) -> Result<(Tensor, AconvCache)> {
    let evals = params.eval_envelopes()?;
    let product = params.product_kernel(&evals)?;
    let mut o = cross_correlate(x, &product, 1, padding)?;
    add_bias(&mut o, params.bias());
    let cache = AconvCache {
        x: x.clone(),
        padding,
        product,
        w: params.w().clone(),
        evals,
        out_shape: o.shape().to_vec(),
    };
    Ok((o, cache))
}

/// Accumulates the gradient with respect to the (product) kernel:
/// dP[k,l,c,q] = Σ_{i,j} dO[i,j,q] · x[i+k−pt, j+l−pl, c].
#[allow(clippy::too_many_arguments)]
pub(crate) fn grad_kernel_core(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    d_o: &[f64],
    ho: usize,
    wo: usize,
    q: usize,
    n: usize,
    pad_top: usize,
    pad_left: usize,
    dp: &mut [f64],
) {
    debug_assert_eq!(dp.len(), n * n * c * q);
    for i in 0..ho {
        let base_i = i as isize - pad_top as isize;
        for j in 0..wo {
            let base_j = j as isize - pad_left as isize;
            let do_row = &d_o[(i * wo + j) * q..(i * wo + j + 1) * q];
            for kk in 0..n {
                let ii = base_i + kk as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for ll in 0..n {
                    let jj = base_j + ll as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let x_off = (ii as usize * w + jj as usize) * c;
                    let dp_off = (kk * n + ll) * c * q;
                    for ch in 0..c {
                        let xv = x[x_off + ch];
                        let row = &mut dp[dp_off + ch * q..dp_off + (ch + 1) * q];
                        for (d, &g) in row.iter_mut().zip(do_row) {
                            *d += xv * g;
                        }
                    }
                }
            }
        }
    }
}

/// Rearranges a product kernel `[n,n,C,Q]` into the kernel that computes the
/// input gradient: rotated 180° spatially with the channel/filter axes
/// swapped, `[n,n,Q,C]`.
pub(crate) fn rotate_for_input_grad(product: &[f64], n: usize, c: usize, q: usize) -> Vec<f64> {
    let mut pr = vec![0.0; n * n * q * c];
    for kk in 0..n {
        for ll in 0..n {
            let src_cell = ((n - 1 - kk) * n + (n - 1 - ll)) * c * q;
            let dst_cell = (kk * n + ll) * q * c;
            for ch in 0..c {
                for f in 0..q {
                    pr[dst_cell + f * c + ch] = product[src_cell + ch * q + f];
                }
            }
        }
    }
    pr
}

/// Input gradient: correlation of dO with the rotated product kernel under
/// the complementary padding (top′ = n−1−top).
#[allow(clippy::too_many_arguments)]
pub(crate) fn input_grad_core(
    d_o: &[f64],
    ho: usize,
    wo: usize,
    q: usize,
    rotated: &[f64],
    n: usize,
    c: usize,
    pad_top: usize,
    pad_left: usize,
    h: usize,
    w: usize,
    d_x: &mut [f64],
) {
    let (bt, bl) = (n - 1 - pad_top, n - 1 - pad_left);
    correlate_core(d_o, ho, wo, q, rotated, n, c, 1, bt, bl, h, w, d_x);
}

/// Backward pass of the adaptive layer. Produces dW (envelope-masked), the
/// per-filter aperture gradients, the bias gradients, and the input gradient.
pub fn aconv_backward(d_o: &Tensor, cache: &AconvCache) -> Result<LayerGradients> {
    if d_o.shape() != cache.out_shape.as_slice() {
        return Err(AconvError::InvalidState(format!(
            "upstream gradient shape {:?} does not match the cached forward output {:?}",
            d_o.shape(),
            cache.out_shape
        )));
    }
    let (h, w_dim, c) = (cache.x.shape()[0], cache.x.shape()[1], cache.x.shape()[2]);
    let (n, q) = (cache.w.shape()[0], cache.w.shape()[3]);
    let (ho, wo) = (d_o.shape()[0], d_o.shape()[1]);
    let (pt, _pb) = cache.padding.amounts(n);

    // Gradient with respect to the product kernel; dW and dσ both read it.
    let mut dp = vec![0.0; n * n * c * q];
    grad_kernel_core(cache.x.data(), h, w_dim, c, d_o.data(), ho, wo, q, n, pt, pt, &mut dp);

    let mut d_w = Tensor::zeros(&[n, n, c, q]);
    let mut d_sigmas = vec![0.0; q];
    for cell in 0..n * n {
        for ch in 0..c {
            let off = (cell * c + ch) * q;
            for (qi, (dsig, ev)) in d_sigmas.iter_mut().zip(&cache.evals).enumerate() {
                let g = dp[off + qi];
                d_w.data_mut()[off + qi] = g * ev.u().data()[cell];
                *dsig += g * cache.w.data()[off + qi] * ev.du_dsigma().data()[cell];
            }
        }
    }

    let mut d_bias = vec![0.0; q];
    for chunk in d_o.data().chunks_exact(q) {
        for (b, &g) in d_bias.iter_mut().zip(chunk) {
            *b += g;
        }
    }

    let rotated = rotate_for_input_grad(cache.product.data(), n, c, q);
    let mut d_x = Tensor::zeros(&[h, w_dim, c]);
    input_grad_core(d_o.data(), ho, wo, q, &rotated, n, c, pt, pt, h, w_dim, d_x.data_mut());

    Ok(LayerGradients { d_w, d_bias, d_sigmas, d_x })
}

/// Ordinary convolution cache: input, weights, padding, output shape.
#[derive(Debug, Clone)]
pub struct ConvCache {
    x: Tensor,
    w: Tensor,
    padding: Padding,
    out_shape: Vec<usize>,
}

/// Gradients of the ordinary convolution baseline.
#[derive(Debug, Clone)]
pub struct ConvGradients {
    pub d_w: Tensor,
    pub d_bias: Vec<f64>,
    pub d_x: Tensor,
}

/// Ordinary convolution forward: correlate with W, add bias.
pub fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    bias: &[f64],
    padding: Padding,
) -> Result<(Tensor, ConvCache)> {
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
    let mut o = cross_correlate(x, w, 1, padding)?;
    add_bias(&mut o, bias);
    let cache =
        ConvCache { x: x.clone(), w: w.clone(), padding, out_shape: o.shape().to_vec() };
    Ok((o, cache))
}

/// Ordinary convolution backward.
pub fn conv_backward(d_o: &Tensor, cache: &ConvCache) -> Result<ConvGradients> {
    if d_o.shape() != cache.out_shape.as_slice() {
        return Err(AconvError::InvalidState(format!(
            "upstream gradient shape {:?} does not match the cached forward output {:?}",
            d_o.shape(),
            cache.out_shape
        )));
    }
    let (h, w_dim, c) = (cache.x.shape()[0], cache.x.shape()[1], cache.x.shape()[2]);
    let (n, q) = (cache.w.shape()[0], cache.w.shape()[3]);
    let (ho, wo) = (d_o.shape()[0], d_o.shape()[1]);
    let (pt, _pb) = cache.padding.amounts(n);

    let mut d_w = Tensor::zeros(&[n, n, c, q]);
    grad_kernel_core(cache.x.data(), h, w_dim, c, d_o.data(), ho, wo, q, n, pt, pt, d_w.data_mut());

    let mut d_bias = vec![0.0; q];
    for chunk in d_o.data().chunks_exact(q) {
        for (b, &g) in d_bias.iter_mut().zip(chunk) {
            *b += g;
        }
    }

    let rotated = rotate_for_input_grad(cache.w.data(), n, c, q);
    let mut d_x = Tensor::zeros(&[h, w_dim, c]);
    input_grad_core(d_o.data(), ho, wo, q, &rotated, n, c, pt, pt, h, w_dim, d_x.data_mut());

    Ok(ConvGradients { d_w, d_bias, d_x })
}
