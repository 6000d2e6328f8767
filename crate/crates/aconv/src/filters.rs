//! The target filter bank for the filter-learning experiment: classic 3×3
//! edge/curvature kernels, pixel-centered Gaussian smoothers, and their
//! compositions, all presented on a common 9×9 support.

use crate::error::{AconvError, Result};
use crate::tensor::{cross_correlate, Padding, Tensor};

/// Pixel-centered, sum-normalized 2-D Gaussian kernel `[n,n]` with `sigma`
/// in pixels. Coordinates run k − (n−1)/2 so odd sizes center on a pixel.
pub fn gauss2d(n: usize, sigma: f64) -> Tensor {
    assert!(n > 0, "gauss2d needs a positive size");
    assert!(sigma > 0.0 && sigma.is_finite(), "gauss2d needs a positive sigma, got {sigma}");
    let mid = (n as f64 - 1.0) / 2.0;
    let mut data = vec![0.0; n * n];
    let mut sum = 0.0;
    for (p, v) in data.iter_mut().enumerate() {
        let di = (p / n) as f64 - mid;
        let dj = (p % n) as f64 - mid;
        *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut data {
        *v /= sum;
    }
    Tensor::new(&[n, n], data).expect("gauss2d shape is valid")
}

/// Embeds a square 2-D kernel in the center of a larger zero kernel. The
/// sizes must share parity so the center stays on the same lattice point.
pub fn embed_center(k: &Tensor, n: usize) -> Result<Tensor> {
    if k.shape().len() != 2 || k.shape()[0] != k.shape()[1] {
        return Err(AconvError::ShapeMismatch(format!(
            "embed_center takes a square 2-D kernel, got {:?}",
            k.shape()
        )));
    }
    let m = k.shape()[0];
    if m > n {
        return Err(AconvError::InvalidArgument(format!(
            "cannot embed a {m}x{m} kernel into {n}x{n}"
        )));
    }
    if (n - m) % 2 != 0 {
        return Err(AconvError::InvalidArgument(format!(
            "sizes {m} and {n} differ in parity; the kernel would sit off-center"
        )));
    }
    let off = (n - m) / 2;
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..m {
        for j in 0..m {
            out.data_mut()[(off + i) * n + (off + j)] = k.data()[i * m + j];
        }
    }
    Ok(out)
}

/// Normalized cross-correlation of two equal-shape tensors: the cosine of
/// the mean-centered values. Affine-invariant; 0 when either side is
/// constant.
pub fn ncc(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "ncc compares equal shapes");
    let n = a.len() as f64;
    let ma = a.data().iter().sum::<f64>() / n;
    let mb = b.data().iter().sum::<f64>() / n;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x - ma, y - mb);
        dot += dx * dy;
        na += dx * dx;
        nb += dy * dy;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn laplace3() -> Tensor {
    Tensor::new(&[3, 3], vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).unwrap()
}

fn sobel_h3() -> Tensor {
    Tensor::new(&[3, 3], vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0]).unwrap()
}

fn sobel_v3() -> Tensor {
    Tensor::new(&[3, 3], vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0]).unwrap()
}

/// Composes a 3×3 base kernel with a 7×7 smoother by full correlation,
/// landing exactly on a 9×9 support.
fn compose(base: &Tensor, smooth: &Tensor) -> Tensor {
    let base_img = Tensor::new(&[3, 3, 1], base.data().to_vec()).unwrap();
    let smooth_k = Tensor::new(&[7, 7, 1, 1], smooth.data().to_vec()).unwrap();
    let out = cross_correlate(&base_img, &smooth_k, 1, Padding::Full)
        .expect("3x3 against 7x7 under full padding is always valid");
    out.reshape(&[9, 9]).unwrap()
}

/// The named 9×9 target kernels the filter-learning experiment regresses
/// onto.
#[derive(Debug, Clone)]
pub struct FilterBank {
    kernels: Vec<(String, Tensor)>,
}

impl FilterBank {
    /// The standard nine targets: three integer-coefficient base kernels
    /// (zero-centered on the 9×9 support), two Gaussian smoothers, and four
    /// base∘Gaussian compositions covering every base and both widths.
    pub fn standard() -> Self {
        let g08 = gauss2d(7, 0.8);
        let g20 = gauss2d(7, 2.0);
        let kernels = vec![
            ("laplace".to_string(), embed_center(&laplace3(), 9).unwrap()),
            ("sobel_h".to_string(), embed_center(&sobel_h3(), 9).unwrap()),
            ("sobel_v".to_string(), embed_center(&sobel_v3(), 9).unwrap()),
            ("gauss_0p8".to_string(), gauss2d(9, 0.8)),
            ("gauss_2p0".to_string(), gauss2d(9, 2.0)),
            ("laplace_gauss_0p8".to_string(), compose(&laplace3(), &g08)),
            ("sobel_h_gauss_0p8".to_string(), compose(&sobel_h3(), &g08)),
            ("sobel_v_gauss_0p8".to_string(), compose(&sobel_v3(), &g08)),
            ("laplace_gauss_2p0".to_string(), compose(&laplace3(), &g20)),
        ];
        Self { kernels }
    }

    /// Adds a tenth target: the identity (delta) kernel, useful as a
    /// sanity-check regression target.
    pub fn with_identity(mut self) -> Self {
        let mut delta = Tensor::zeros(&[9, 9]);
        delta.data_mut()[4 * 9 + 4] = 1.0;
        self.kernels.push(("identity".to_string(), delta));
        self
    }

    pub fn kernels(&self) -> &[(String, Tensor)] {
        &self.kernels
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.kernels.iter().find(|(n, _)| n == name).map(|(_, k)| k)
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}
