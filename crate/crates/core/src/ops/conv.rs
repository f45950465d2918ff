use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output extent for one spatial axis.
fn out_extent(input: usize, pad: usize, k: usize, stride: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

fn check_args(x: &Tensor, w: &Tensor, b: Option<&Tensor>, stride: usize, padding: usize) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize)> {
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, wcin, kh, kw) = w.dims4()?;
    if stride < 1 {
        return Err(Error::InvalidArgument(format!("conv2d: stride {stride} < 1")));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "conv2d: kernel {kh}x{kw} must have odd extents"
        )));
    }
    if wcin != cin {
        return Err(Error::dim(
            "conv2d input channels",
            format!("{wcin}"),
            format!("{cin}"),
        ));
    }
    if h + 2 * padding < kh || wd + 2 * padding < kw {
        return Err(Error::dim(
            "conv2d spatial extent",
            format!(">= {kh}x{kw} after padding"),
            format!("{}x{}", h + 2 * padding, wd + 2 * padding),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(Error::dim("conv2d bias", format!("[{cout}]"), format!("{:?}", b.shape())));
        }
    }
    Ok((n, cin, h, wd, cout, kh, kw, padding))
}

fn pad_zero(x: &Tensor, pad: usize) -> (Vec<f32>, usize, usize) {
    let (n, c, h, w) = x.dims4().expect("validated");
    let hp = h + 2 * pad;
    let wp = w + 2 * pad;
    let mut out = vec![0.0f32; n * c * hp * wp];
    for p in 0..n * c {
        let src = p * h * w;
        let dst = p * hp * wp;
        for y in 0..h {
            let s = src + y * w;
            let d = dst + (y + pad) * wp + pad;
            out[d..d + w].copy_from_slice(&x.data()[s..s + w]);
        }
    }
    (out, hp, wp)
}

/// Fused 9-tap row kernel for 3x3 stride-1 convolution: the workhorse of
/// the whole model, written so the inner loop autovectorizes.
#[inline]
fn acc_3x3_s1(out_row: &mut [f32], r0: &[f32], r1: &[f32], r2: &[f32], w: &[f32]) {
    let (w00, w01, w02) = (w[0], w[1], w[2]);
    let (w10, w11, w12) = (w[3], w[4], w[5]);
    let (w20, w21, w22) = (w[6], w[7], w[8]);
    let n = out_row.len();
    for i in 0..n {
        out_row[i] += w00 * r0[i] + w01 * r0[i + 1] + w02 * r0[i + 2]
            + w10 * r1[i] + w11 * r1[i + 1] + w12 * r1[i + 2]
            + w20 * r2[i] + w21 * r2[i + 1] + w22 * r2[i + 2];
    }
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
///
/// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout);
/// output (N,Cout,H',W') with H' = (H + 2p - kh)/stride + 1.
pub fn conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, h, wd, cout, kh, kw, pad) = check_args(x, w, b, stride, padding)?;
    let ho = out_extent(h, pad, kh, stride);
    let wo = out_extent(wd, pad, kw, stride);
    let oplane = ho * wo;
    let mut out = vec![0.0f32; n * cout * oplane];

    if let Some(b) = b {
        for ni in 0..n {
            for co in 0..cout {
                let base = (ni * cout + co) * oplane;
                out[base..base + oplane].fill(b.data()[co]);
            }
        }
    }

    // Pointwise stride-1 convolution is a plain matrix product
    // (Cout x Cin) * (Cin x HW) per batch item.
    if kh == 1 && kw == 1 && stride == 1 && pad == 0 {
        let plane = h * wd;
        for ni in 0..n {
            unsafe {
                matrixmultiply::sgemm(
                    cout,
                    cin,
                    plane,
                    1.0,
                    w.data().as_ptr(),
                    cin as isize,
                    1,
                    x.data().as_ptr().add(ni * cin * plane),
                    plane as isize,
                    1,
                    1.0,
                    out.as_mut_ptr().add(ni * cout * plane),
                    plane as isize,
                    1,
                );
            }
        }
        return Tensor::from_vec(&[n, cout, ho, wo], out);
    }

    let (xp, hp, wp) = pad_zero(x, pad);
    let three_by_three = kh == 3 && kw == 3 && stride == 1;
    for ni in 0..n {
        for co in 0..cout {
            let obase = (ni * cout + co) * oplane;
            for ci in 0..cin {
                let pbase = (ni * cin + ci) * hp * wp;
                let wbase = (co * cin + ci) * kh * kw;
                let wk = &w.data()[wbase..wbase + kh * kw];
                if three_by_three {
                    for oy in 0..ho {
                        let r0 = &xp[pbase + oy * wp..];
                        let r1 = &xp[pbase + (oy + 1) * wp..];
                        let r2 = &xp[pbase + (oy + 2) * wp..];
                        acc_3x3_s1(&mut out[obase + oy * wo..obase + (oy + 1) * wo], r0, r1, r2, wk);
                    }
                } else {
                    for ky in 0..kh {
                        for oy in 0..ho {
                            let irow = pbase + (oy * stride + ky) * wp;
                            let orow = obase + oy * wo;
                            for kx in 0..kw {
                                let wv = wk[ky * kw + kx];
                                if stride == 1 {
                                    let src = &xp[irow + kx..irow + kx + wo];
                                    let dst = &mut out[orow..orow + wo];
                                    for i in 0..wo {
                                        dst[i] += wv * src[i];
                                    }
                                } else {
                                    for ox in 0..wo {
                                        out[orow + ox] += wv * xp[irow + ox * stride + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, ho, wo], out)
}

/// dL/dx for [`conv2d`].
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    w: &Tensor,
    x_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, h, wd) = match x_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::dim("conv2d_backward_input", "4-D shape", format!("{x_shape:?}"))),
    };
    let (cout, _, kh, kw) = w.dims4()?;
    let (_, _, ho, wo) = grad_out.dims4()?;
    let hp = h + 2 * padding;
    let wp = wd + 2 * padding;
    let mut gxp = vec![0.0f32; n * cin * hp * wp];

    for ni in 0..n {
        for co in 0..cout {
            let gbase = (ni * cout + co) * ho * wo;
            for ci in 0..cin {
                let pbase = (ni * cin + ci) * hp * wp;
                let wbase = (co * cin + ci) * kh * kw;
                for ky in 0..kh {
                    for oy in 0..ho {
                        let prow = pbase + (oy * stride + ky) * wp;
                        let grow = gbase + oy * wo;
                        for kx in 0..kw {
                            let wv = w.data()[wbase + ky * kw + kx];
                            if stride == 1 {
                                let dst = &mut gxp[prow + kx..prow + kx + wo];
                                let src = &grad_out.data()[grow..grow + wo];
                                for i in 0..wo {
                                    dst[i] += wv * src[i];
                                }
                            } else {
                                for ox in 0..wo {
                                    gxp[prow + ox * stride + kx] += wv * grad_out.data()[grow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    // Strip the padding border back off.
    let mut gx = vec![0.0f32; n * cin * h * wd];
    for p in 0..n * cin {
        for y in 0..h {
            let s = p * hp * wp + (y + padding) * wp + padding;
            let d = p * h * wd + y * wd;
            gx[d..d + wd].copy_from_slice(&gxp[s..s + wd]);
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// dL/dw for [`conv2d`].
pub fn conv2d_backward_weight(
    grad_out: &Tensor,
    x: &Tensor,
    w_shape: &[usize],
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (n, cin, _, _) = x.dims4()?;
    let (cout, _, kh, kw) = match w_shape {
        &[co, ci, kh, kw] => (co, ci, kh, kw),
        _ => return Err(Error::dim("conv2d_backward_weight", "4-D shape", format!("{w_shape:?}"))),
    };
    let (_, _, ho, wo) = grad_out.dims4()?;
    let (xp, _hp, wp) = pad_zero(x, padding);
    let mut gw = vec![0.0f32; cout * cin * kh * kw];

    for ni in 0..n {
        for co in 0..cout {
            let gbase = (ni * cout + co) * ho * wo;
            for ci in 0..cin {
                let pbase = (ni * cin + ci) * (x.shape()[2] + 2 * padding) * wp;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0f32;
                        for oy in 0..ho {
                            let grow = &grad_out.data()[gbase + oy * wo..gbase + (oy + 1) * wo];
                            let irow = pbase + (oy * stride + ky) * wp + kx;
                            if stride == 1 {
                                let xrow = &xp[irow..irow + wo];
                                for i in 0..wo {
                                    acc += grow[i] * xrow[i];
                                }
                            } else {
                                for ox in 0..wo {
                                    acc += grow[ox] * xp[irow + ox * stride];
                                }
                            }
                        }
                        gw[(co * cin + ci) * kh * kw + ky * kw + kx] += acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(w_shape, gw)
}

/// dL/db for [`conv2d`]: sum of the output gradient over batch and space.
pub fn conv2d_backward_bias(grad_out: &Tensor) -> Result<Tensor> {
    let (n, cout, ho, wo) = grad_out.dims4()?;
    let mut gb = vec![0.0f32; cout];
    for ni in 0..n {
        for co in 0..cout {
            let base = (ni * cout + co) * ho * wo;
            let mut acc = 0.0f32;
            for v in &grad_out.data()[base..base + ho * wo] {
                acc += v;
            }
            gb[co] += acc;
        }
    }
    Tensor::from_vec(&[cout], gb)
}
