use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(
            "layer_norm affine",
            format!("[{c}]"),
            format!("gamma {:?}, beta {:?}", gamma.shape(), beta.shape()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("layer_norm: eps {eps} <= 0")));
    }
    Ok((n, c, h, w))
}

/// LayerNorm over the channel dimension, independently at every (n,h,w)
/// position, followed by the per-channel affine (gamma, beta).
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let (n, c, h, w) = check(x, gamma, beta, eps)?;
    let plane = h * w;
    let mut out = vec![0.0f32; x.numel()];
    let inv_c = 1.0 / c as f32;
    for ni in 0..n {
        let base = ni * c * plane;
        for p in 0..plane {
            let mut mean = 0.0f32;
            for ci in 0..c {
                mean += x.data()[base + ci * plane + p];
            }
            mean *= inv_c;
            let mut var = 0.0f32;
            for ci in 0..c {
                let d = x.data()[base + ci * plane + p] - mean;
                var += d * d;
            }
            var *= inv_c;
            let inv_std = 1.0 / (var + eps).sqrt();
            for ci in 0..c {
                let xhat = (x.data()[base + ci * plane + p] - mean) * inv_std;
                out[base + ci * plane + p] = gamma.data()[ci] * xhat + beta.data()[ci];
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Gradients of [`layer_norm`] w.r.t. input, gamma and beta.
pub fn layer_norm_backward(
    x: &Tensor,
    gamma: &Tensor,
    grad_out: &Tensor,
    eps: f32,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let inv_c = 1.0 / c as f32;
    let mut gx = vec![0.0f32; x.numel()];
    let mut ggamma = vec![0.0f32; c];
    let mut gbeta = vec![0.0f32; c];

    for ni in 0..n {
        let base = ni * c * plane;
        for p in 0..plane {
            let mut mean = 0.0f32;
            for ci in 0..c {
                mean += x.data()[base + ci * plane + p];
            }
            mean *= inv_c;
            let mut var = 0.0f32;
            for ci in 0..c {
                let d = x.data()[base + ci * plane + p] - mean;
                var += d * d;
            }
            var *= inv_c;
            let inv_std = 1.0 / (var + eps).sqrt();

            // Accumulate the two reductions the input gradient needs.
            let mut sum_dxhat = 0.0f32;
            let mut sum_dxhat_xhat = 0.0f32;
            for ci in 0..c {
                let idx = base + ci * plane + p;
                let xhat = (x.data()[idx] - mean) * inv_std;
                let g = grad_out.data()[idx];
                let dxhat = g * gamma.data()[ci];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                ggamma[ci] += g * xhat;
                gbeta[ci] += g;
            }
            for ci in 0..c {
                let idx = base + ci * plane + p;
                let xhat = (x.data()[idx] - mean) * inv_std;
                let dxhat = grad_out.data()[idx] * gamma.data()[ci];
                gx[idx] = inv_std * (dxhat - inv_c * sum_dxhat - xhat * inv_c * sum_dxhat_xhat);
            }
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), gx)?,
        Tensor::from_vec(&[c], ggamma)?,
        Tensor::from_vec(&[c], gbeta)?,
    ))
}
