use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-axis sample positions for align-corners=false bilinear sampling:
/// source center (i + 0.5) * scale - 0.5, clamped to the valid range.
fn axis_table(n_in: usize, n_out: usize) -> (Vec<usize>, Vec<usize>, Vec<f32>) {
    let scale = n_in as f32 / n_out as f32;
    let mut i0 = Vec::with_capacity(n_out);
    let mut i1 = Vec::with_capacity(n_out);
    let mut frac = Vec::with_capacity(n_out);
    for i in 0..n_out {
        let src = ((i as f32 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        i0.push(lo);
        i1.push(hi);
        frac.push(src - lo as f32);
    }
    (i0, i1, frac)
}

/// Bilinear resize (align-corners=false, edge-clamped).
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if out_h < 1 || out_w < 1 {
        return Err(Error::InvalidArgument(format!(
            "bilinear_resize: target {out_h}x{out_w} must be >= 1"
        )));
    }
    let (y0, y1, fy) = axis_table(h, out_h);
    let (x0, x1, fx) = axis_table(w, out_w);
    let mut out = vec![0.0f32; n * c * out_h * out_w];
    for p in 0..n * c {
        let src = p * h * w;
        let dst = p * out_h * out_w;
        for oy in 0..out_h {
            let r0 = src + y0[oy] * w;
            let r1 = src + y1[oy] * w;
            let wy = fy[oy];
            for ox in 0..out_w {
                let wx = fx[ox];
                let a = x.data()[r0 + x0[ox]];
                let b = x.data()[r0 + x1[ox]];
                let c_ = x.data()[r1 + x0[ox]];
                let d = x.data()[r1 + x1[ox]];
                let top = a + wx * (b - a);
                let bot = c_ + wx * (d - c_);
                out[dst + oy * out_w + ox] = top + wy * (bot - top);
            }
        }
    }
    Tensor::from_vec(&[n, c, out_h, out_w], out)
}

/// Scatter the output gradient back through the same sampling weights.
pub fn bilinear_resize_backward(grad_out: &Tensor, x_shape: &[usize]) -> Result<Tensor> {
    let (n, c, h, w) = match x_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::dim("bilinear_resize_backward", "4-D shape", format!("{x_shape:?}"))),
    };
    let (_, _, out_h, out_w) = grad_out.dims4()?;
    let (y0, y1, fy) = axis_table(h, out_h);
    let (x0, x1, fx) = axis_table(w, out_w);
    let mut gx = vec![0.0f32; n * c * h * w];
    for p in 0..n * c {
        let src = p * h * w;
        let dst = p * out_h * out_w;
        for oy in 0..out_h {
            let wy = fy[oy];
            for ox in 0..out_w {
                let wx = fx[ox];
                let g = grad_out.data()[dst + oy * out_w + ox];
                gx[src + y0[oy] * w + x0[ox]] += g * (1.0 - wy) * (1.0 - wx);
                gx[src + y0[oy] * w + x1[ox]] += g * (1.0 - wy) * wx;
                gx[src + y1[oy] * w + x0[ox]] += g * wy * (1.0 - wx);
                gx[src + y1[oy] * w + x1[ox]] += g * wy * wx;
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}
