//! Shared helpers for the integration suites: brute-force reference
//! implementations (written against the math, not the library code) and
//! small generators for random test instances.

#![allow(dead_code)]

use aconv::tensor::{Padding, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Relative error with an absolute floor, so comparisons near zero do not
/// blow up: |a - b| / max(floor, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-8, f64::max(a.abs(), b.abs()))
}

pub fn uniform_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Padding amounts (top/left, bottom/right) for one spatial axis.
pub fn pad_amounts(n: usize, padding: Padding) -> (usize, usize) {
    match padding {
        Padding::Valid => (0, 0),
        Padding::Same => ((n - 1) / 2, (n - 1) - (n - 1) / 2),
        Padding::Full => (n - 1, n - 1),
    }
}

/// Brute-force cross-correlation over an explicitly zero-padded copy of the
/// input. Quadruple loop, no cleverness; this is the oracle the optimized
/// implementation must match exactly.
pub fn naive_cross_correlate(x: &Tensor, k: &Tensor, stride: usize, padding: Padding) -> Tensor {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (n, q) = (k.shape()[0], k.shape()[3]);
    assert_eq!(k.shape()[1], n, "oracle assumes square kernels");
    assert_eq!(k.shape()[2], c);
    let (pt, pb) = pad_amounts(n, padding);

    // Materialize the padded image.
    let (hp, wp) = (h + pt + pb, w + pt + pb);
    let mut xp = vec![0.0; hp * wp * c];
    for i in 0..h {
        for j in 0..w {
            for ch in 0..c {
                xp[((i + pt) * wp + (j + pt)) * c + ch] = x.data()[(i * w + j) * c + ch];
            }
        }
    }

    let ho = (hp - n) / stride + 1;
    let wo = (wp - n) / stride + 1;
    let mut out = vec![0.0; ho * wo * q];
    for i in 0..ho {
        for j in 0..wo {
            for f in 0..q {
                let mut acc = 0.0;
                for kk in 0..n {
                    for ll in 0..n {
                        for ch in 0..c {
                            let xv = xp[((i * stride + kk) * wp + (j * stride + ll)) * c + ch];
                            let kv = k.data()[((kk * n + ll) * c + ch) * q + f];
                            acc += xv * kv;
                        }
                    }
                }
                out[(i * wo + j) * q + f] = acc;
            }
        }
    }
    Tensor::new(&[ho, wo, q], out).unwrap()
}

/// Brute-force Hadamard product with prefix broadcasting: `b` may have fewer
/// dimensions than `a`; the missing trailing dimensions are treated as 1.
pub fn naive_broadcast_multiply(a: &Tensor, b: &Tensor) -> Tensor {
    let ashape = a.shape().to_vec();
    let mut out = vec![0.0; a.data().len()];
    let bdims = b.shape().len();
    for (flat, slot) in out.iter_mut().enumerate() {
        // Decode the row-major index of `a`, then keep only the leading
        // dimensions that `b` has (clamping broadcast dimensions to 0).
        let mut rem = flat;
        let mut idx = vec![0usize; ashape.len()];
        for d in (0..ashape.len()).rev() {
            idx[d] = rem % ashape[d];
            rem /= ashape[d];
        }
        let mut bflat = 0usize;
        for d in 0..bdims {
            let bi = if b.shape()[d] == 1 { 0 } else { idx[d] };
            bflat = bflat * b.shape()[d] + bi;
        }
        *slot = a.data()[flat] * b.data()[bflat];
    }
    Tensor::new(&ashape, out).unwrap()
}

/// Unbiased sample variance.
pub fn naive_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}
