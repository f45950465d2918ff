//! Kernel-level checks: sliding-window conv oracle, normalization
//! statistics, gate/shuffle/resize contracts and their edge cases.

mod common;

use common::{max_abs_diff, random_tensor};
use lowlight_core::ops::{
    bilinear_resize, conv2d, layer_norm, pixel_shuffle, pixel_unshuffle, simple_gate,
};
use lowlight_core::Tensor;

/// Naive sliding-window cross-correlation in f64.
fn conv_oracle(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (cout, _, kh, kw) = w.dims4().unwrap();
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f32; n * cout * ho * wo];
    for ni in 0..n {
        for co in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.map_or(0.0f64, |b| b.data()[co] as f64);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()
                                    [((ni * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((ni * cout + co) * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, ho, wo], out).unwrap()
}

#[test]
fn conv_identity_kernel_passes_input_through() {
    // 1x1 kernel holding the identity matrix across channels.
    let x = random_tensor(1, &[1, 3, 5, 5], -1.0, 1.0);
    let mut w = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let y = conv2d(&x, &w, None, 1, 0).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_constant_field_sums_kernel() {
    let c = 0.4f32;
    let x = Tensor::filled(&[1, 1, 6, 6], c);
    let w = Tensor::filled(&[1, 1, 3, 3], 1.0);
    let y = conv2d(&x, &w, None, 1, 1).unwrap();
    // Interior pixels see all nine taps.
    for oy in 1..5 {
        for ox in 1..5 {
            let v = y.data()[oy * 6 + ox];
            assert!((v - 9.0 * c).abs() < 1e-5, "interior ({oy},{ox}) = {v}");
        }
    }
    // Corner only sees four.
    assert!((y.data()[0] - 4.0 * c).abs() < 1e-5);
}

#[test]
fn conv_matches_oracle_on_random_case() {
    let x = random_tensor(2, &[1, 3, 8, 8], -1.0, 1.0);
    let w = random_tensor(3, &[4, 3, 3, 3], -0.5, 0.5);
    let b = random_tensor(4, &[4], -0.1, 0.1);
    let y = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    let o = conv_oracle(&x, &w, Some(&b), 1, 1);
    assert!(max_abs_diff(&y, &o) < 1e-5);
}

#[test]
fn conv_matches_oracle_exhaustively_on_small_shapes() {
    let mut seed = 10_000u64;
    for h in 1..=8usize {
        for w in 1..=8usize {
            for cin in 1..=4usize {
                for cout in 1..=4usize {
                    for &k in &[1usize, 3] {
                        for &stride in &[1usize, 2] {
                            let pad = (k - 1) / 2;
                            if h + 2 * pad < k || w + 2 * pad < k {
                                continue;
                            }
                            seed += 1;
                            let x = random_tensor(seed, &[1, cin, h, w], -1.0, 1.0);
                            let wt = random_tensor(seed + 1, &[cout, cin, k, k], -1.0, 1.0);
                            let b = random_tensor(seed + 2, &[cout], -0.5, 0.5);
                            let y = conv2d(&x, &wt, Some(&b), stride, pad).unwrap();
                            let o = conv_oracle(&x, &wt, Some(&b), stride, pad);
                            let d = max_abs_diff(&y, &o);
                            assert!(
                                d < 1e-4,
                                "h={h} w={w} cin={cin} cout={cout} k={k} s={stride}: {d}"
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn conv_rejects_bad_arguments() {
    let x = random_tensor(20, &[1, 2, 4, 4], 0.0, 1.0);
    let w = random_tensor(21, &[2, 2, 3, 3], 0.0, 1.0);
    assert!(conv2d(&x, &w, None, 0, 1).is_err(), "stride 0");
    let w_even = random_tensor(22, &[2, 2, 2, 2], 0.0, 1.0);
    assert!(conv2d(&x, &w_even, None, 1, 0).is_err(), "even kernel");
    let w_mismatch = random_tensor(23, &[2, 3, 3, 3], 0.0, 1.0);
    assert!(conv2d(&x, &w_mismatch, None, 1, 1).is_err(), "cin mismatch");
}

#[test]
fn conv_is_deterministic() {
    let x = random_tensor(30, &[2, 4, 9, 7], -1.0, 1.0);
    let w = random_tensor(31, &[4, 4, 3, 3], -1.0, 1.0);
    let b = random_tensor(32, &[4], -1.0, 1.0);
    let y1 = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    let y2 = conv2d(&x, &w, Some(&b), 1, 1).unwrap();
    assert_eq!(y1.data(), y2.data());
}

#[test]
fn layer_norm_trivial_cases() {
    // Constant across channels at each position: eps guards the zero
    // variance and the output collapses to beta.
    let mut x = Tensor::zeros(&[1, 4, 2, 2]);
    for c in 0..4 {
        for p in 0..4 {
            x.data_mut()[c * 4 + p] = 0.3 * (p as f32 + 1.0);
        }
    }
    let gamma = Tensor::filled(&[4], 1.0);
    let beta = Tensor::zeros(&[4]);
    let y = layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
    assert!(y.data().iter().all(|v| v.abs() < 1e-4), "constant channels -> zeros");

    let gamma0 = Tensor::zeros(&[4]);
    let beta5 = Tensor::filled(&[4], 5.0);
    let x = random_tensor(40, &[1, 4, 3, 3], -2.0, 2.0);
    let y = layer_norm(&x, &gamma0, &beta5, 1e-6).unwrap();
    assert!(y.data().iter().all(|&v| v == 5.0), "affine collapse");
}

#[test]
fn layer_norm_statistics_oracle() {
    let x = random_tensor(41, &[1, 8, 4, 4], -2.0, 2.0);
    let gamma = Tensor::filled(&[8], 1.0);
    let beta = Tensor::zeros(&[8]);
    let y = layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
    for p in 0..16 {
        let vals: Vec<f64> = (0..8).map(|c| y.data()[c * 16 + p] as f64).collect();
        let mean = vals.iter().sum::<f64>() / 8.0;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-5, "position {p}: mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "position {p}: var {var}");
    }
}

#[test]
fn layer_norm_offset_invariance() {
    // Adding a channel-constant offset per position changes nothing.
    let x = random_tensor(42, &[1, 6, 3, 3], -1.0, 1.0);
    let gamma = random_tensor(43, &[6], 0.5, 1.5);
    let beta = random_tensor(44, &[6], -0.5, 0.5);
    let offsets = random_tensor(45, &[1, 1, 3, 3], -3.0, 3.0);
    let mut shifted = x.clone();
    for c in 0..6 {
        for p in 0..9 {
            shifted.data_mut()[c * 9 + p] += offsets.data()[p];
        }
    }
    let y0 = layer_norm(&x, &gamma, &beta, 1e-6).unwrap();
    let y1 = layer_norm(&shifted, &gamma, &beta, 1e-6).unwrap();
    assert!(max_abs_diff(&y0, &y1) < 1e-5);
}

#[test]
fn layer_norm_rejects_channel_mismatch() {
    let x = random_tensor(46, &[1, 4, 2, 2], 0.0, 1.0);
    let gamma = Tensor::filled(&[3], 1.0);
    let beta = Tensor::zeros(&[4]);
    assert!(layer_norm(&x, &gamma, &beta, 1e-6).is_err());
}

#[test]
fn simple_gate_cases() {
    let x = Tensor::from_vec(&[1, 2, 1, 1], vec![2.0, 3.0]).unwrap();
    assert_eq!(simple_gate(&x).unwrap().data(), &[6.0]);

    let x = Tensor::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(simple_gate(&x).unwrap().data(), &[3.0, 8.0]);

    let mut x = random_tensor(50, &[1, 6, 2, 2], -1.0, 1.0);
    for v in &mut x.data_mut()[12..] {
        *v = 0.0;
    }
    assert!(simple_gate(&x).unwrap().data().iter().all(|&v| v == 0.0));

    let odd = random_tensor(51, &[1, 3, 2, 2], 0.0, 1.0);
    assert!(simple_gate(&odd).is_err());
}

#[test]
fn pixel_shuffle_canonical_ordering() {
    let x = Tensor::from_vec(&[1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);

    let x = random_tensor(60, &[2, 5, 3, 4], -1.0, 1.0);
    let y = pixel_shuffle(&x, 1).unwrap();
    assert_eq!(y.data(), x.data(), "r=1 is the identity");
}

#[test]
fn pixel_shuffle_roundtrips_bit_exactly() {
    let x = random_tensor(61, &[1, 8, 3, 3], -1.0, 1.0);
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), &[1, 2, 6, 6]);
    let back = pixel_unshuffle(&y, 2).unwrap();
    assert_eq!(back.shape(), x.shape());
    assert_eq!(back.data(), x.data());

    let bad = random_tensor(62, &[1, 6, 2, 2], 0.0, 1.0);
    assert!(pixel_shuffle(&bad, 2).is_err(), "6 channels not divisible by 4");
}

#[test]
fn bilinear_constants_and_edge_clamp() {
    let x = Tensor::filled(&[1, 2, 3, 5], 0.25);
    for &(h, w) in &[(1usize, 1usize), (2, 2), (7, 9), (6, 10)] {
        let y = bilinear_resize(&x, h, w).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    let x = Tensor::from_vec(&[1, 1, 1, 1], vec![0.8]).unwrap();
    let y = bilinear_resize(&x, 4, 4).unwrap();
    assert!(y.data().iter().all(|&v| (v - 0.8).abs() < 1e-6));
}

#[test]
fn bilinear_matches_sampling_formula() {
    // Direct evaluation of the align-corners=false formula on a ramp.
    let x = Tensor::from_vec(
        &[1, 1, 4, 4],
        (0..16).map(|i| i as f32).collect(),
    )
    .unwrap();
    let y = bilinear_resize(&x, 2, 2).unwrap();
    let sample = |oy: f32, ox: f32| -> f32 {
        let sy = (oy + 0.5) * 2.0 - 0.5;
        let sx = (ox + 0.5) * 2.0 - 0.5;
        let y0 = sy.floor();
        let x0 = sx.floor();
        let fy = sy - y0;
        let fx = sx - x0;
        let at = |r: f32, c: f32| x.data()[r as usize * 4 + c as usize];
        at(y0, x0) * (1.0 - fy) * (1.0 - fx)
            + at(y0, x0 + 1.0) * (1.0 - fy) * fx
            + at(y0 + 1.0, x0) * fy * (1.0 - fx)
            + at(y0 + 1.0, x0 + 1.0) * fy * fx
    };
    for oy in 0..2 {
        for ox in 0..2 {
            let expected = sample(oy as f32, ox as f32);
            let got = y.data()[oy * 2 + ox];
            assert!((got - expected).abs() < 1e-6, "({oy},{ox}): {got} vs {expected}");
        }
    }
}
