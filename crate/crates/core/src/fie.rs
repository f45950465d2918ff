//! Illumination stage: a Module Map estimated from the half-resolution
//! input divides the full-resolution Fourier amplitude, and the inverse
//! transform reconstructs the brightened intermediate image.

use crate::error::{Error, Result};
use crate::model::{Bound, ModelConfig};
use crate::tape::{Tape, Var};

/// Positivity floor added after the softplus of the map head, so the
/// amplitude division is always safe.
pub const MAP_EPSILON: f32 = 1e-4;

/// LayerNorm epsilon used by every block in the model.
pub const NORM_EPSILON: f32 = 1e-6;

/// Frequency-domain pointwise MLP: transform, mix the stacked real/imag
/// channels with two 1x1 convolutions, transform back. One changed input
/// pixel reaches every output pixel.
pub fn fre_mlp(g: &mut Tape, z: &Var, params: &Bound, prefix: &str) -> Result<Var> {
    let w1 = params.get(&format!("{prefix}.conv1.weight"))?;
    let b1 = params.get(&format!("{prefix}.conv1.bias"))?;
    let w2 = params.get(&format!("{prefix}.conv2.weight"))?;
    let b2 = params.get(&format!("{prefix}.conv2.bias"))?;

    let s = g.fft2_packed(z)?;
    let s = g.conv2d(&s, w1, Some(b1), 1, 0)?;
    let s = g.gelu(&s)?;
    let s = g.conv2d(&s, w2, Some(b2), 1, 0)?;
    g.ifft2_real_packed(&s)
}

/// Metaformer-shaped residual block: frequency MLP as the token mixer,
/// gated pointwise FFN as the channel mixer.
pub fn fie_block(g: &mut Tape, z: &Var, params: &Bound, prefix: &str) -> Result<Var> {
    let t = g.layer_norm(
        z,
        params.get(&format!("{prefix}.norm1.gamma"))?,
        params.get(&format!("{prefix}.norm1.beta"))?,
        NORM_EPSILON,
    )?;
    let t = fre_mlp(g, &t, params, &format!("{prefix}.fre_mlp"))?;
    let z1 = g.add(&t, z)?;

    let t = g.layer_norm(
        &z1,
        params.get(&format!("{prefix}.norm2.gamma"))?,
        params.get(&format!("{prefix}.norm2.beta"))?,
        NORM_EPSILON,
    )?;
    let t = g.conv2d(
        &t,
        params.get(&format!("{prefix}.ffn.expand.weight"))?,
        Some(params.get(&format!("{prefix}.ffn.expand.bias"))?),
        1,
        0,
    )?;
    let t = g.simple_gate(&t)?;
    let t = g.conv2d(
        &t,
        params.get(&format!("{prefix}.ffn.project.weight"))?,
        Some(params.get(&format!("{prefix}.ffn.project.bias"))?),
        1,
        0,
    )?;
    g.add(&t, &z1)
}

/// Module Map head: 3x3 conv in, the FIE blocks, 3x3 conv out to three
/// channels, then softplus + epsilon so every value is a safe divisor.
pub fn estimate_module_map(
    g: &mut Tape,
    x_half: &Var,
    params: &Bound,
    cfg: &ModelConfig,
) -> Result<Var> {
    let mut v = g.conv2d(
        x_half,
        params.get("fie.conv_in.weight")?,
        Some(params.get("fie.conv_in.bias")?),
        1,
        1,
    )?;
    for k in 0..cfg.fie_blocks {
        v = fie_block(g, &v, params, &format!("fie.block{k}"))?;
    }
    let logits = g.conv2d(
        &v,
        params.get("fie.conv_out.weight")?,
        Some(params.get("fie.conv_out.bias")?),
        1,
        1,
    )?;
    let sp = g.softplus(&logits)?;
    g.add_scalar(&sp, MAP_EPSILON)
}

/// Full illumination stage. Returns the *unclipped* intermediate image;
/// dividing the complex spectrum by the (real, positive) upsampled map is
/// exactly the amplitude division with the phase left untouched.
pub fn enhance_illumination(
    g: &mut Tape,
    x: &Var,
    params: &Bound,
    cfg: &ModelConfig,
) -> Result<Var> {
    let (_, c, h, w) = match g.shape(x) {
        &[n, c, h, w] => (n, c, h, w),
        other => {
            return Err(Error::dim("enhance_illumination", "4-D input", format!("{other:?}")))
        }
    };
    if c != 3 {
        return Err(Error::dim("enhance_illumination", "3 channels", format!("{c}")));
    }
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "enhance_illumination needs H,W >= 2, got {h}x{w}"
        )));
    }

    let x_half = g.bilinear_resize(x, h / 2, w / 2)?;
    let map_half = estimate_module_map(g, &x_half, params, cfg)?;
    let map = g.bilinear_resize(&map_half, h, w)?;

    let spectrum = g.fft2_packed(x)?;
    let divisor = g.concat_channels(&map, &map)?;
    let enhanced = g.div(&spectrum, &divisor)?;
    g.ifft2_real_packed(&enhanced)
}
