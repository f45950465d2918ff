use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mirror index about the borders without repeating the edge sample
/// (…, 2, 1 | 0, 1, 2, … , n-1 | n-2, n-3, …).
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    // Pads never exceed the extent here, so one fold per side suffices.
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

/// Reflect padding with pads = [top, bottom, left, right].
pub fn reflect_pad(x: &Tensor, pads: [usize; 4]) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let [t, b, l, r] = pads;
    if t.max(b) >= h || l.max(r) >= w {
        return Err(Error::InvalidArgument(format!(
            "reflect_pad: pads {pads:?} too large for {h}x{w}"
        )));
    }
    let ho = h + t + b;
    let wo = w + l + r;
    let mut out = vec![0.0f32; n * c * ho * wo];
    for p in 0..n * c {
        let src = p * h * w;
        let dst = p * ho * wo;
        for oy in 0..ho {
            let iy = reflect_index(oy as isize - t as isize, h);
            for ox in 0..wo {
                let ix = reflect_index(ox as isize - l as isize, w);
                out[dst + oy * wo + ox] = x.data()[src + iy * w + ix];
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

/// Accumulate the padded gradient back onto the original positions.
pub fn reflect_pad_backward(grad_out: &Tensor, x_shape: &[usize], pads: [usize; 4]) -> Result<Tensor> {
    let (n, c, h, w) = match x_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::dim("reflect_pad_backward", "4-D shape", format!("{x_shape:?}"))),
    };
    let [t, _b, l, _r] = pads;
    let (_, _, ho, wo) = grad_out.dims4()?;
    let mut gx = vec![0.0f32; n * c * h * w];
    for p in 0..n * c {
        let src = p * ho * wo;
        let dst = p * h * w;
        for oy in 0..ho {
            let iy = reflect_index(oy as isize - t as isize, h);
            for ox in 0..wo {
                let ix = reflect_index(ox as isize - l as isize, w);
                gx[dst + iy * w + ix] += grad_out.data()[src + oy * wo + ox];
            }
        }
    }
    Tensor::from_vec(x_shape, gx)
}

/// Spatial crop starting at (top, left) with extent (h, w).
pub fn crop(x: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, hin, win) = x.dims4()?;
    if top + h > hin || left + w > win {
        return Err(Error::InvalidArgument(format!(
            "crop: window {h}x{w}@({top},{left}) exceeds {hin}x{win}"
        )));
    }
    let mut out = vec![0.0f32; n * c * h * w];
    for p in 0..n * c {
        for y in 0..h {
            let s = p * hin * win + (y + top) * win + left;
            let d = p * h * w + y * w;
            out[d..d + w].copy_from_slice(&x.data()[s..s + w]);
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

/// Zero-embed a crop gradient back into the input shape.
pub fn crop_backward(grad_out: &Tensor, x_shape: &[usize], top: usize, left: usize) -> Result<Tensor> {
    let (n, c, hin, win) = match x_shape {
        &[n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::dim("crop_backward", "4-D shape", format!("{x_shape:?}"))),
    };
    let (_, _, h, w) = grad_out.dims4()?;
    let mut gx = vec![0.0f32; n * c * hin * win];
    for p in 0..n * c {
        for y in 0..h {
            let d = p * hin * win + (y + top) * win + left;
            let s = p * h * w + y * w;
            gx[d..d + w].copy_from_slice(&grad_out.data()[s..s + w]);
        }
    }
    Tensor::from_vec(x_shape, gx)
}
