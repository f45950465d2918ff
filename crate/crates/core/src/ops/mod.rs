//! Pure forward/backward kernels over plain tensors. The autodiff tape in
//! [`crate::tape`] records these; they are also usable standalone.

mod conv;
mod norm;
mod pad;
mod resize;
mod shuffle;

pub use conv::{conv2d, conv2d_backward_bias, conv2d_backward_input, conv2d_backward_weight};
pub use norm::{layer_norm, layer_norm_backward};
pub use pad::{crop, crop_backward, reflect_pad, reflect_pad_backward};
pub use resize::{bilinear_resize, bilinear_resize_backward};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Element-wise product of the first and second channel halves:
/// (N,2C,H,W) -> (N,C,H,W).
pub fn simple_gate(x: &Tensor) -> Result<Tensor> {
    let (n, c2, h, w) = x.dims4()?;
    if c2 % 2 != 0 {
        return Err(Error::dim("simple_gate", "even channel count", format!("{c2}")));
    }
    let c = c2 / 2;
    let plane = h * w;
    let mut out = vec![0.0f32; n * c * plane];
    for ni in 0..n {
        let a = ni * c2 * plane;
        let b = a + c * plane;
        let dst = ni * c * plane;
        for i in 0..c * plane {
            out[dst + i] = x.data()[a + i] * x.data()[b + i];
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

/// Gradients of [`simple_gate`] w.r.t. its (N,2C,H,W) input.
pub fn simple_gate_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c2, h, w) = x.dims4()?;
    let c = c2 / 2;
    let plane = h * w;
    let mut grad = vec![0.0f32; x.numel()];
    for ni in 0..n {
        let a = ni * c2 * plane;
        let b = a + c * plane;
        let g = ni * c * plane;
        for i in 0..c * plane {
            grad[a + i] = grad_out.data()[g + i] * x.data()[b + i];
            grad[b + i] = grad_out.data()[g + i] * x.data()[a + i];
        }
    }
    Tensor::from_vec(x.shape(), grad)
}
