#![allow(dead_code)]

use lowlight_core::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in [lo, hi).
pub fn random_tensor(seed: u64, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let mut r = rng(seed);
    let data: Vec<f32> = (0..shape.iter().product::<usize>())
        .map(|_| r.gen_range(lo..hi))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f32 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in comparison");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

pub fn max_abs(a: &[f32]) -> f32 {
    a.iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

/// Direct evaluation of the normalized DFT sum in f64, per channel.
/// Returns (real, imag).
pub fn dft_oracle_f64(data: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut real = vec![0.0f64; n * c * plane];
    let mut imag = vec![0.0f64; n * c * plane];
    for p in 0..n * c {
        for u in 0..h {
            for v in 0..w {
                let mut re = 0.0f64;
                let mut im = 0.0f64;
                for hh in 0..h {
                    for ww in 0..w {
                        let angle = -2.0 * std::f64::consts::PI
                            * (hh as f64 * u as f64 / h as f64 + ww as f64 * v as f64 / w as f64);
                        let x = data[p * plane + hh * w + ww];
                        re += x * angle.cos();
                        im += x * angle.sin();
                    }
                }
                real[p * plane + u * w + v] = re * scale;
                imag[p * plane + u * w + v] = im * scale;
            }
        }
    }
    (real, imag)
}

/// Inverse of [`dft_oracle_f64`], returning only the real part.
pub fn idft_oracle_real_f64(
    real: &[f64],
    imag: &[f64],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Vec<f64> {
    let plane = h * w;
    let scale = 1.0 / ((h * w) as f64).sqrt();
    let mut out = vec![0.0f64; n * c * plane];
    for p in 0..n * c {
        for hh in 0..h {
            for ww in 0..w {
                let mut acc = 0.0f64;
                for u in 0..h {
                    for v in 0..w {
                        let angle = 2.0 * std::f64::consts::PI
                            * (hh as f64 * u as f64 / h as f64 + ww as f64 * v as f64 / w as f64);
                        let re = real[p * plane + u * w + v];
                        let im = imag[p * plane + u * w + v];
                        acc += re * angle.cos() - im * angle.sin();
                    }
                }
                out[p * plane + hh * w + ww] = acc * scale;
            }
        }
    }
    out
}
