//! Per-pixel signal-reliability map that steers the spatial/frequency
//! branch fusion of the denoiser.

use crate::error::Result;
use crate::ops;
use crate::tensor::Tensor;

/// Stabilizer for the noise denominator. It is scaled by the mean blurred
/// brightness of each image, which makes the map exactly invariant to a
/// global exposure scale.
pub const SNR_EPSILON: f32 = 1e-4;

#[derive(Debug, Clone)]
pub struct SnrMap {
    /// (N,1,H,W) values in [0,1]; higher means more trustworthy signal.
    pub values: Tensor,
    pub blur_kernel_size: usize,
    pub epsilon: f32,
}

/// g = channel mean of the image, g' = box blur of g (reflect padding),
/// noise = |g - g'|, raw = g' / (noise + eps * mean(g')), and the result
/// is raw normalized by its per-image maximum, clamped into [0,1].
///
/// A constant image has zero noise everywhere and maps to all ones.
pub fn compute_snr_map(x_lol: &Tensor, blur: usize, epsilon: f32) -> Result<SnrMap> {
    let (n, _, h, w) = x_lol.dims4()?;
    let g = x_lol.channel_mean()?;
    let pad = blur / 2;
    let padded = ops::reflect_pad(&g, [pad, pad, pad, pad])?;
    let kernel = Tensor::filled(&[1, 1, blur, blur], 1.0 / (blur * blur) as f32);
    let blurred = ops::conv2d(&padded, &kernel, None, 1, 0)?;

    let plane = h * w;
    let mut values = vec![0.0f32; n * plane];
    for ni in 0..n {
        let gs = &g.data()[ni * plane..(ni + 1) * plane];
        let bs = &blurred.data()[ni * plane..(ni + 1) * plane];
        let mean_blur: f32 = bs.iter().sum::<f32>() / plane as f32;
        let out = &mut values[ni * plane..(ni + 1) * plane];
        if mean_blur <= 0.0 {
            // Fully black image: noiseless limit, maximum reliability.
            out.fill(1.0);
            continue;
        }
        let floor = epsilon * mean_blur;
        let mut max_raw = 0.0f32;
        for i in 0..plane {
            let noise = (gs[i] - bs[i]).abs();
            let raw = bs[i] / (noise + floor);
            out[i] = raw;
            max_raw = max_raw.max(raw);
        }
        if max_raw <= 0.0 {
            out.fill(1.0);
            continue;
        }
        for v in out.iter_mut() {
            *v = (*v / max_raw).clamp(0.0, 1.0);
        }
    }

    Ok(SnrMap {
        values: Tensor::from_vec(&[n, 1, h, w], values)?,
        blur_kernel_size: blur,
        epsilon,
    })
}
