//! Dense row-major tensors and the numeric substrate: cross-correlation,
//! broadcast Hadamard product, and the mean-of-variances statistic.
//!
//! `cross_correlate` is the workhorse of every layer. Its accumulation order
//! (kernel row, kernel column, channel — with the filter axis innermost) is
//! part of the contract: it matches a naive quadruple-loop evaluation term by
//! term, so results are bit-identical to the brute-force reference while the
//! contiguous filter axis still vectorizes.

use crate::error::{AconvError, Result};

/// Dense N-dimensional array of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and its row-major data.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(AconvError::ShapeMismatch(format!(
                "shape {shape:?} must be non-empty with positive dimensions"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(AconvError::ShapeMismatch(format!(
                "shape {shape:?} implies {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// All-zeros tensor. Panics on a degenerate shape (programming error).
    pub fn zeros(shape: &[usize]) -> Self {
        let len: usize = shape.iter().product();
        assert!(!shape.is_empty() && len > 0, "zeros: degenerate shape {shape:?}");
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Reinterprets the data under a new shape of equal length.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }
}

/// Zero-padding policy for one correlation call. `Same` keeps the spatial
/// dimensions at stride 1 (extra pixel of padding goes to the bottom/right
/// for even kernels); `Full` pads by n−1 on every side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
    Full,
}

impl Padding {
    /// (leading, trailing) zero-padding for a kernel of side `n`, applied to
    /// both spatial axes.
    pub(crate) fn amounts(self, n: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => ((n - 1) / 2, (n - 1) - (n - 1) / 2),
            Padding::Full => (n - 1, n - 1),
        }
    }

    pub(crate) fn label(self) -> &'static str {
        match self {
            Padding::Valid => "valid",
            Padding::Same => "same",
            Padding::Full => "full",
        }
    }

    pub(crate) fn from_label(s: &str) -> Result<Self> {
        match s {
            "valid" => Ok(Padding::Valid),
            "same" => Ok(Padding::Same),
            "full" => Ok(Padding::Full),
            other => Err(AconvError::DataFormat(format!("unknown padding label {other:?}"))),
        }
    }
}

/// Spatial output length for one axis, or an error if the kernel overhangs
/// even the padded input.
fn out_len(input: usize, n: usize, pad: (usize, usize), stride: usize) -> Result<usize> {
    let padded = input + pad.0 + pad.1;
    if n > padded {
        return Err(AconvError::ShapeMismatch(format!(
            "kernel size {n} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - n) / stride + 1)
}

/// The shared correlation kernel. Iterates output positions; for each, sums
/// kernel-row → kernel-column → channel with all `q` filters accumulated in
/// an inner contiguous loop. Out-of-bounds taps are skipped, which is exact:
/// the padded value is zero and adding a zero product never changes a finite
/// accumulator.
#[allow(clippy::too_many_arguments)]
pub(crate) fn correlate_core(
    x: &[f64],
    h: usize,
    w: usize,
    c: usize,
    kern: &[f64],
    n: usize,
    q: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    ho: usize,
    wo: usize,
    out: &mut [f64],
) {
    debug_assert_eq!(x.len(), h * w * c);
    debug_assert_eq!(kern.len(), n * n * c * q);
    debug_assert_eq!(out.len(), ho * wo * q);
    let mut acc = vec![0.0f64; q];
    for i in 0..ho {
        let base_i = (i * stride) as isize - pad_top as isize;
        for j in 0..wo {
            let base_j = (j * stride) as isize - pad_left as isize;
            acc.fill(0.0);
            for kk in 0..n {
                let ii = base_i + kk as isize;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                let x_row = ii as usize * w;
                let k_row = kk * n;
                for ll in 0..n {
                    let jj = base_j + ll as isize;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    let x_off = (x_row + jj as usize) * c;
                    let k_off = (k_row + ll) * c * q;
                    for ch in 0..c {
                        let xv = x[x_off + ch];
                        let krow = &kern[k_off + ch * q..k_off + (ch + 1) * q];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
            out[(i * wo + j) * q..(i * wo + j + 1) * q].copy_from_slice(&acc);
        }
    }
}

/// Cross-correlation of `x` `[H,W,C]` with a square kernel stack `k`
/// `[n,n,C,Q]`, summing over channels, producing `[H',W',Q]`.
pub fn cross_correlate(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    if stride == 0 {
        return Err(AconvError::InvalidArgument("stride must be positive".into()));
    }
    if x.shape().len() != 3 {
        return Err(AconvError::ShapeMismatch(format!(
            "input must be [H,W,C], got {:?}",
            x.shape()
        )));
    }
    if k.shape().len() != 4 || k.shape()[0] != k.shape()[1] {
        return Err(AconvError::ShapeMismatch(format!(
            "kernel must be square [n,n,C,Q], got {:?}",
            k.shape()
        )));
    }
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (n, q) = (k.shape()[0], k.shape()[3]);
    if k.shape()[2] != c {
        return Err(AconvError::ShapeMismatch(format!(
            "kernel expects {} channels, input has {c}",
            k.shape()[2]
        )));
    }
    let pad = padding.amounts(n);
    let ho = out_len(h, n, pad, stride)?;
    let wo = out_len(w, n, pad, stride)?;
    let mut out = Tensor::zeros(&[ho, wo, q]);
    correlate_core(x.data(), h, w, c, k.data(), n, q, stride, pad.0, pad.0, ho, wo, out.data_mut());
    Ok(out)
}

/// Hadamard product with prefix broadcasting: `b` may have fewer dimensions
/// than `a` (its axes align with `a`'s leading axes) and any of its axes may
/// be 1, in which case it is repeated along that axis.
pub fn elementwise_multiply(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ashape, bshape) = (a.shape(), b.shape());
    if bshape.len() > ashape.len() {
        return Err(AconvError::ShapeMismatch(format!(
            "mask shape {bshape:?} has more dimensions than target {ashape:?}"
        )));
    }
    for d in 0..bshape.len() {
        if bshape[d] != ashape[d] && bshape[d] != 1 {
            return Err(AconvError::ShapeMismatch(format!(
                "mask shape {bshape:?} incompatible with {ashape:?} at axis {d}"
            )));
        }
    }

    let mut out = vec![0.0; a.len()];
    if bshape.iter().zip(ashape).all(|(bd, ad)| bd == ad) {
        // Fast path: b is an exact prefix, so each b element scales one
        // contiguous block of a.
        let rest: usize = ashape[bshape.len()..].iter().product();
        for (bi, &bv) in b.data().iter().enumerate() {
            let block = &a.data()[bi * rest..(bi + 1) * rest];
            for (o, &av) in out[bi * rest..(bi + 1) * rest].iter_mut().zip(block) {
                *o = av * bv;
            }
        }
    } else {
        // General path: decode each index of a, clamp broadcast axes of b.
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut rem = flat;
            let mut bflat = 0usize;
            let mut bmul = 1usize;
            // Walk axes from the last to the first, building b's flat index
            // for the axes it has.
            let mut bidx = vec![0usize; bshape.len()];
            for d in (0..ashape.len()).rev() {
                let i = rem % ashape[d];
                rem /= ashape[d];
                if d < bshape.len() {
                    bidx[d] = if bshape[d] == 1 { 0 } else { i };
                }
            }
            for (d, &i) in bidx.iter().enumerate().rev() {
                bflat += i * bmul;
                bmul *= bshape[d];
            }
            *slot = a.data()[flat] * b.data()[bflat];
        }
    }
    Tensor::new(ashape, out)
}

/// Mean over kernel positions of the per-position unbiased sample variance:
/// the statistic whose preservation the normalized envelope guarantees.
/// `samples` is laid out `[.., S]` with the sample axis last.
pub fn mvar(samples: &Tensor) -> Result<f64> {
    let shape = samples.shape();
    let s = *shape.last().expect("tensor shapes are non-empty");
    if s < 2 {
        return Err(AconvError::InvalidArgument(format!(
            "mvar needs at least 2 samples per position, got {s}"
        )));
    }
    let positions = samples.len() / s;
    let mut acc = 0.0;
    for p in 0..positions {
        let xs = &samples.data()[p * s..(p + 1) * s];
        let mean = xs.iter().sum::<f64>() / s as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (s as f64 - 1.0);
        acc += var;
    }
    Ok(acc / positions as f64)
}
