use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Depth-to-space: (N, C*r^2, H, W) -> (N, C, rH, rW).
///
/// Channel c*r^2 + dy*r + dx lands on output offset (dy, dx) inside each
/// r x r cell, matching the usual sub-pixel convolution layout.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c_in, h, w) = x.dims4()?;
    if r < 1 {
        return Err(Error::InvalidArgument(format!("pixel_shuffle: r {r} < 1")));
    }
    if c_in % (r * r) != 0 {
        return Err(Error::dim(
            "pixel_shuffle channels",
            format!("multiple of r^2 = {}", r * r),
            format!("{c_in}"),
        ));
    }
    let c = c_in / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = vec![0.0f32; x.numel()];
    for ni in 0..n {
        for co in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let src = (ni * c_in + ci) * h * w;
                    let dst = (ni * c + co) * ho * wo;
                    for y in 0..h {
                        for x_ in 0..w {
                            out[dst + (y * r + dy) * wo + (x_ * r + dx)] =
                                x.data()[src + y * w + x_];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c, ho, wo], out)
}

/// Space-to-depth inverse of [`pixel_shuffle`]; also its gradient.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (n, c, ho, wo) = x.dims4()?;
    if r < 1 || ho % r != 0 || wo % r != 0 {
        return Err(Error::dim(
            "pixel_unshuffle extents",
            format!("H,W divisible by {r}"),
            format!("{ho}x{wo}"),
        ));
    }
    let (h, w) = (ho / r, wo / r);
    let c_out = c * r * r;
    let mut out = vec![0.0f32; x.numel()];
    for ni in 0..n {
        for co in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let ci = co * r * r + dy * r + dx;
                    let dst = (ni * c_out + ci) * h * w;
                    let src = (ni * c + co) * ho * wo;
                    for y in 0..h {
                        for x_ in 0..w {
                            out[dst + y * w + x_] =
                                x.data()[src + (y * r + dy) * wo + (x_ * r + dx)];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, c_out, h, w], out)
}
