//! Cross-correlation against a brute-force quadruple-loop oracle, plus the
//! tensor substrate's algebraic invariants (linearity, broadcasting, mvar).

mod common;

use aconv::tensor::{cross_correlate, elementwise_multiply, mvar, Padding, Tensor};
use common::{naive_broadcast_multiply, naive_cross_correlate, naive_variance, rng, uniform_tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn identity_kernel_returns_input() {
    let x = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let k = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let o = cross_correlate(&x, &k, 1, Padding::Valid).unwrap();
    assert_eq!(o.shape(), &[2, 2, 1]);
    assert_eq!(o.data(), x.data());
}

#[test]
fn ones_kernel_sums_window() {
    let x = Tensor::new(&[3, 3, 1], vec![1.0; 9]).unwrap();
    let k = Tensor::new(&[2, 2, 1, 1], vec![1.0; 4]).unwrap();
    let o = cross_correlate(&x, &k, 1, Padding::Valid).unwrap();
    assert_eq!(o.shape(), &[2, 2, 1]);
    assert!(o.data().iter().all(|&v| v == 4.0));
}

#[test]
fn zero_kernel_returns_zeros() {
    let mut r = rng(7);
    let x = uniform_tensor(&[5, 6, 2], -1.0, 1.0, &mut r);
    let k = Tensor::zeros(&[3, 3, 2, 4]);
    for padding in [Padding::Valid, Padding::Same, Padding::Full] {
        let o = cross_correlate(&x, &k, 1, padding).unwrap();
        assert!(o.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn matches_naive_oracle_exactly_200_instances() {
    let mut r = rng(42);
    for case in 0..200 {
        let c = r.gen_range(1..=3);
        let q = r.gen_range(1..=4);
        let n = [1, 2, 3, 5][r.gen_range(0..4)];
        let h = r.gen_range(n..=8);
        let w = r.gen_range(n..=8);
        let stride = r.gen_range(1..=2);
        let padding = [Padding::Valid, Padding::Same, Padding::Full][r.gen_range(0..3)];
        let x = uniform_tensor(&[h, w, c], -2.0, 2.0, &mut r);
        let k = uniform_tensor(&[n, n, c, q], -2.0, 2.0, &mut r);

        let got = cross_correlate(&x, &k, stride, padding).unwrap();
        let want = naive_cross_correlate(&x, &k, stride, padding);
        assert_eq!(got.shape(), want.shape(), "case {case}: shape mismatch");
        for (i, (a, b)) in got.data().iter().zip(want.data()).enumerate() {
            assert!(a == b, "case {case}: element {i} differs: {a} vs {b}");
        }
    }
}

#[test]
fn same_padding_preserves_spatial_dims() {
    let mut r = rng(3);
    for n in [1usize, 2, 3, 4, 5] {
        let x = uniform_tensor(&[6, 7, 1], -1.0, 1.0, &mut r);
        let k = uniform_tensor(&[n, n, 1, 2], -1.0, 1.0, &mut r);
        let o = cross_correlate(&x, &k, 1, Padding::Same).unwrap();
        assert_eq!(o.shape(), &[6, 7, 2], "n={n}");
    }
}

#[test]
fn full_padding_output_dims() {
    let mut r = rng(4);
    let x = uniform_tensor(&[5, 5, 1], -1.0, 1.0, &mut r);
    let k = uniform_tensor(&[3, 3, 1, 1], -1.0, 1.0, &mut r);
    let o = cross_correlate(&x, &k, 1, Padding::Full).unwrap();
    assert_eq!(o.shape(), &[7, 7, 1]);
}

#[test]
fn linearity_in_the_kernel() {
    let mut r = rng(11);
    for _ in 0..20 {
        let x = uniform_tensor(&[6, 6, 2], -1.0, 1.0, &mut r);
        let k1 = uniform_tensor(&[3, 3, 2, 3], -1.0, 1.0, &mut r);
        let k2 = uniform_tensor(&[3, 3, 2, 3], -1.0, 1.0, &mut r);
        let (a, b) = (r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0));

        let mixed = Tensor::new(
            k1.shape(),
            k1.data().iter().zip(k2.data()).map(|(p, q)| a * p + b * q).collect(),
        )
        .unwrap();
        let lhs = cross_correlate(&x, &mixed, 1, Padding::Valid).unwrap();
        let o1 = cross_correlate(&x, &k1, 1, Padding::Valid).unwrap();
        let o2 = cross_correlate(&x, &k2, 1, Padding::Valid).unwrap();
        for i in 0..lhs.data().len() {
            let rhs = a * o1.data()[i] + b * o2.data()[i];
            let scale = f64::max(1.0, f64::max(lhs.data()[i].abs(), rhs.abs()));
            assert!(
                (lhs.data()[i] - rhs).abs() / scale < 1e-12,
                "linearity violated at {i}: {} vs {rhs}",
                lhs.data()[i]
            );
        }
    }
}

#[test]
fn rejects_bad_arguments() {
    let x = Tensor::new(&[2, 2, 1], vec![1.0; 4]).unwrap();
    let k_ok = Tensor::new(&[1, 1, 1, 1], vec![1.0]).unwrap();
    let k_chan = Tensor::new(&[1, 1, 3, 1], vec![1.0; 3]).unwrap();
    assert!(cross_correlate(&x, &k_ok, 0, Padding::Valid).is_err(), "zero stride");
    assert!(cross_correlate(&x, &k_chan, 1, Padding::Valid).is_err(), "channel mismatch");
    let k_big = Tensor::new(&[4, 4, 1, 1], vec![1.0; 16]).unwrap();
    assert!(cross_correlate(&x, &k_big, 1, Padding::Valid).is_err(), "kernel larger than input");
}

#[test]
fn multiply_identity_and_null_masks() {
    let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let ones = Tensor::new(&[2, 2], vec![1.0; 4]).unwrap();
    let zeros = Tensor::zeros(&[2, 2]);
    assert_eq!(elementwise_multiply(&a, &ones).unwrap().data(), a.data());
    assert!(elementwise_multiply(&a, &zeros).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn multiply_broadcasts_envelope_over_channels_and_filters() {
    let mut r = rng(5);
    let a = uniform_tensor(&[3, 3, 2, 4], -1.0, 1.0, &mut r);
    let b = uniform_tensor(&[3, 3], -1.0, 1.0, &mut r);
    let got = elementwise_multiply(&a, &b).unwrap();
    let want = naive_broadcast_multiply(&a, &b);
    assert_eq!(got.shape(), want.shape());
    for i in 0..got.data().len() {
        assert_eq!(got.data()[i], want.data()[i], "element {i}");
    }
}

#[test]
fn multiply_rejects_incompatible_shapes() {
    let a = Tensor::zeros(&[3, 3, 2]);
    let b = Tensor::zeros(&[2, 3]);
    assert!(elementwise_multiply(&a, &b).is_err());
    let c = Tensor::zeros(&[3, 3, 2, 1, 5]);
    assert!(elementwise_multiply(&a, &c).is_err(), "mask with more dims than target");
}

#[test]
fn mvar_identical_samples_is_zero() {
    let s = Tensor::new(&[2, 2, 3], vec![5.0; 12]).unwrap();
    assert_eq!(mvar(&s).unwrap(), 0.0);
}

#[test]
fn mvar_two_point_unbiased() {
    // A single position with samples {0, 2}: mean 1, unbiased variance 2.
    let s = Tensor::new(&[1, 1, 2], vec![0.0, 2.0]).unwrap();
    assert_eq!(mvar(&s).unwrap(), 2.0);
}

#[test]
fn mvar_matches_per_position_variance_average() {
    let mut r = rng(19);
    let (n, s_count) = (3usize, 40usize);
    let t = uniform_tensor(&[n, n, s_count], -1.0, 1.0, &mut r);
    // Oracle: unbiased variance per (k,l), averaged.
    let mut acc = 0.0;
    for k in 0..n {
        for l in 0..n {
            let xs: Vec<f64> =
                (0..s_count).map(|s| t.data()[(k * n + l) * s_count + s]).collect();
            acc += naive_variance(&xs);
        }
    }
    let want = acc / (n * n) as f64;
    let got = mvar(&t).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn mvar_estimates_population_variance() {
    // Each position i.i.d. uniform on [-a, a] with variance a^2/3 = 0.1.
    let a = (0.3f64).sqrt();
    let mut r = rng(23);
    let s_count = 100_000usize;
    let t = uniform_tensor(&[2, 2, s_count], -a, a, &mut r);
    let got = mvar(&t).unwrap();
    assert!((got - 0.1).abs() < 3e-3, "mvar {got} should estimate 0.1");
}

#[test]
fn mvar_requires_two_samples() {
    let s = Tensor::new(&[2, 2, 1], vec![1.0; 4]).unwrap();
    assert!(mvar(&s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Correlating with any kernel keeps outputs finite for finite inputs.
    #[test]
    fn prop_outputs_finite(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let h = r.gen_range(3..8usize);
        let w = r.gen_range(3..8usize);
        let c = r.gen_range(1..3usize);
        let q = r.gen_range(1..3usize);
        let x = uniform_tensor(&[h, w, c], -100.0, 100.0, &mut r);
        let k = uniform_tensor(&[3, 3, c, q], -100.0, 100.0, &mut r);
        let o = cross_correlate(&x, &k, 1, Padding::Same).unwrap();
        prop_assert!(o.data().iter().all(|v| v.is_finite()), "non-finite output");
    }

    /// Stride-s output equals the stride-1 output subsampled at multiples of s.
    #[test]
    fn prop_stride_subsamples(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x = uniform_tensor(&[7, 7, 1], -1.0, 1.0, &mut r);
        let k = uniform_tensor(&[2, 2, 1, 1], -1.0, 1.0, &mut r);
        let dense = cross_correlate(&x, &k, 1, Padding::Valid).unwrap();
        let strided = cross_correlate(&x, &k, 2, Padding::Valid).unwrap();
        let dw = dense.shape()[1];
        let sw = strided.shape()[1];
        for i in 0..strided.shape()[0] {
            for j in 0..sw {
                let a = strided.data()[i * sw + j];
                let b = dense.data()[(i * 2) * dw + j * 2];
                prop_assert!(a == b, "strided ({i},{j}) disagrees with subsampled dense");
            }
        }
    }
}
