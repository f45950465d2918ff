//! Orthonormal 2-D discrete Fourier transform and amplitude/phase
//! decomposition.
//!
//! Both directions carry a 1/sqrt(HW) factor so the transform pair is
//! unitary: Parseval holds without extra scaling and forward/inverse are
//! symmetric. rustfft provides the unnormalized kernels; this module owns
//! the normalization and the (N,C,H,W) plane layout.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f32>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f32>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Complex 2-D frequency representation, one plane per (n, c).
#[derive(Debug, Clone)]
pub struct Spectrum {
    shape: Vec<usize>,
    real: Vec<f32>,
    imag: Vec<f32>,
}

impl Spectrum {
    pub fn from_parts(shape: &[usize], real: Vec<f32>, imag: Vec<f32>) -> Result<Spectrum> {
        let numel: usize = shape.iter().product();
        if real.len() != numel || imag.len() != numel {
            return Err(Error::dim(
                "Spectrum::from_parts",
                format!("{numel} elements"),
                format!("real {}, imag {}", real.len(), imag.len()),
            ));
        }
        Ok(Spectrum {
            shape: shape.to_vec(),
            real,
            imag,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn real(&self) -> &[f32] {
        &self.real
    }

    pub fn imag(&self) -> &[f32] {
        &self.imag
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim("Spectrum::dims4", "4-D shape", format!("{:?}", self.shape))),
        }
    }
}

/// Polar form of a spectrum: amplitude >= 0, phase in (-pi, pi].
#[derive(Debug, Clone)]
pub struct AmpPhase {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

/// Real-part inverse transform plus the largest imaginary component left
/// behind; the residue is ~0 whenever the input spectrum is Hermitian.
#[derive(Debug, Clone)]
pub struct IfftReal {
    pub image: Tensor,
    pub max_imag_residue: f32,
}

fn transpose(src: &[Complex<f32>], rows: usize, cols: usize, dst: &mut [Complex<f32>]) {
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// One unitary 2-D transform over an H×W plane held as split re/im slices.
fn transform_plane(
    re_in: &[f32],
    im_in: &[f32],
    re_out: &mut [f32],
    im_out: &mut [f32],
    h: usize,
    w: usize,
    inverse: bool,
) {
    let numel = h * w;
    let mut buf: Vec<Complex<f32>> = (0..numel)
        .map(|i| Complex::new(re_in[i], im_in[i]))
        .collect();

    // Rows: rustfft processes the buffer in contiguous chunks of the plan
    // length, which is exactly one pass over all H rows.
    plan(w, inverse).process(&mut buf);

    let mut tbuf = vec![Complex::new(0.0, 0.0); numel];
    transpose(&buf, h, w, &mut tbuf);
    plan(h, inverse).process(&mut tbuf);
    transpose(&tbuf, w, h, &mut buf);

    let scale = 1.0 / (numel as f32).sqrt();
    for (i, v) in buf.iter().enumerate() {
        re_out[i] = v.re * scale;
        im_out[i] = v.im * scale;
    }
}

fn transform_all(
    re_in: &[f32],
    im_in: &[f32],
    shape: &[usize],
    inverse: bool,
) -> (Vec<f32>, Vec<f32>) {
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let plane = h * w;
    let planes = re_in.len() / plane;
    let mut re_out = vec![0.0f32; re_in.len()];
    let mut im_out = vec![0.0f32; im_in.len()];
    for p in 0..planes {
        let r = p * plane..(p + 1) * plane;
        transform_plane(
            &re_in[r.clone()],
            &im_in[r.clone()],
            &mut re_out[r.clone()],
            &mut im_out[r.clone()],
            h,
            w,
            inverse,
        );
    }
    (re_out, im_out)
}

/// Unitary 2-D DFT of a real image, per channel:
/// X(u,v) = (1/sqrt(HW)) * sum x(h,w) e^{-i 2 pi (hu/H + wv/W)}.
pub fn fft2(x: &Tensor) -> Result<Spectrum> {
    let (_, _, h, w) = x.dims4()?;
    if h < 1 || w < 1 {
        return Err(Error::InvalidArgument("fft2 needs H,W >= 1".into()));
    }
    let zeros = vec![0.0f32; x.numel()];
    let (real, imag) = transform_all(x.data(), &zeros, x.shape(), false);
    Spectrum::from_parts(x.shape(), real, imag)
}

/// Exact unitary inverse of [`fft2`]; returns the full complex result.
pub fn ifft2(s: &Spectrum) -> Result<(Tensor, Tensor)> {
    s.dims4()?;
    let (real, imag) = transform_all(&s.real, &s.imag, &s.shape, true);
    Ok((
        Tensor::from_vec(&s.shape, real)?,
        Tensor::from_vec(&s.shape, imag)?,
    ))
}

/// Inverse transform keeping the real part, with the imaginary residue
/// reported for Hermitian-symmetry checks.
pub fn ifft2_real(s: &Spectrum) -> Result<IfftReal> {
    let (image, imag) = ifft2(s)?;
    let max_imag_residue = imag.data().iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    Ok(IfftReal {
        image,
        max_imag_residue,
    })
}

/// amplitude = sqrt(re^2 + im^2), phase = atan2(im, re); the origin maps to
/// phase 0.
pub fn decompose(s: &Spectrum) -> AmpPhase {
    let amplitude: Vec<f32> = s
        .real
        .iter()
        .zip(&s.imag)
        .map(|(&re, &im)| (re * re + im * im).sqrt())
        .collect();
    let phase: Vec<f32> = s
        .real
        .iter()
        .zip(&s.imag)
        .map(|(&re, &im)| if re == 0.0 && im == 0.0 { 0.0 } else { im.atan2(re) })
        .collect();
    AmpPhase {
        amplitude: Tensor::from_vec(&s.shape, amplitude).expect("shape preserved"),
        phase: Tensor::from_vec(&s.shape, phase).expect("shape preserved"),
    }
}

/// real = amp*cos(phase), imag = amp*sin(phase).
pub fn recompose(ap: &AmpPhase) -> Result<Spectrum> {
    if ap.amplitude.shape() != ap.phase.shape() {
        return Err(Error::dim(
            "recompose",
            format!("{:?}", ap.amplitude.shape()),
            format!("{:?}", ap.phase.shape()),
        ));
    }
    if let Some(&neg) = ap.amplitude.data().iter().find(|&&a| a < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "recompose: negative amplitude {neg}"
        )));
    }
    let real: Vec<f32> = ap
        .amplitude
        .data()
        .iter()
        .zip(ap.phase.data())
        .map(|(&a, &p)| a * p.cos())
        .collect();
    let imag: Vec<f32> = ap
        .amplitude
        .data()
        .iter()
        .zip(ap.phase.data())
        .map(|(&a, &p)| a * p.sin())
        .collect();
    Spectrum::from_parts(ap.amplitude.shape(), real, imag)
}

/// Forward transform with the spectrum packed as channels:
/// (N,C,H,W) -> (N,2C,H,W) holding [real planes | imag planes].
///
/// The packed layout keeps frequency features inside the ordinary real
/// tensor machinery (and its autodiff); its adjoint is exactly
/// [`ifft2_real_packed`].
pub fn fft2_packed(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let s = fft2(x)?;
    let plane = h * w;
    let mut out = vec![0.0f32; 2 * n * c * plane];
    for ni in 0..n {
        let src = ni * c * plane..(ni + 1) * c * plane;
        let re_dst = ni * 2 * c * plane;
        out[re_dst..re_dst + c * plane].copy_from_slice(&s.real()[src.clone()]);
        let im_dst = re_dst + c * plane;
        out[im_dst..im_dst + c * plane].copy_from_slice(&s.imag()[src]);
    }
    Tensor::from_vec(&[n, 2 * c, h, w], out)
}

/// Real part of the unitary inverse of a packed spectrum:
/// (N,2C,H,W) -> (N,C,H,W). Adjoint of [`fft2_packed`].
pub fn ifft2_real_packed(packed: &Tensor) -> Result<Tensor> {
    let (n, c2, h, w) = packed.dims4()?;
    if c2 % 2 != 0 {
        return Err(Error::dim(
            "ifft2_real_packed",
            "even channel count",
            format!("{c2}"),
        ));
    }
    let c = c2 / 2;
    let plane = h * w;
    let mut real = vec![0.0f32; n * c * plane];
    let mut imag = vec![0.0f32; n * c * plane];
    for ni in 0..n {
        let re_src = ni * 2 * c * plane;
        let dst = ni * c * plane..(ni + 1) * c * plane;
        real[dst.clone()].copy_from_slice(&packed.data()[re_src..re_src + c * plane]);
        let im_src = re_src + c * plane;
        imag[dst].copy_from_slice(&packed.data()[im_src..im_src + c * plane]);
    }
    let s = Spectrum::from_parts(&[n, c, h, w], real, imag)?;
    let (out, _imag) = ifft2(&s)?;
    Ok(out)
}
