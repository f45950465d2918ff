//! Second stage: encoder/decoder denoiser whose bottleneck fuses a
//! spatial and a frequency branch under SNR-map guidance, with
//! pixel-shuffle upsampling and a global residual onto the original input.

use crate::error::{Error, Result};
use crate::fie::{fre_mlp, NORM_EPSILON};
use crate::model::{Bound, ModelConfig, SkipMode};
use crate::tape::{Tape, Var};

/// Convex combination of the two branch outputs under the reliability
/// map: fused = spatial * R + frequency * (1 - R), with R broadcast over
/// channels.
pub fn snr_fuse(g: &mut Tape, spatial: &Var, frequency: &Var, r: &Var) -> Result<Var> {
    if g.shape(spatial) != g.shape(frequency) {
        return Err(Error::dim(
            "snr_fuse branches",
            format!("{:?}", g.shape(spatial)),
            format!("{:?}", g.shape(frequency)),
        ));
    }
    let (_, c, h, w) = match g.shape(spatial) {
        &[n, c, h, w] => (n, c, h, w),
        other => return Err(Error::dim("snr_fuse", "4-D branches", format!("{other:?}"))),
    };
    match g.shape(r) {
        &[_, 1, rh, rw] if rh == h && rw == w => {}
        other => {
            return Err(Error::dim(
                "snr_fuse map",
                format!("[N,1,{h},{w}]"),
                format!("{other:?}"),
            ))
        }
    }
    let rb = g.broadcast_channels(r, c)?;
    let inv = g.mul_scalar(&rb, -1.0)?;
    let inv = g.add_scalar(&inv, 1.0)?;
    let s = g.mul(spatial, &rb)?;
    let f = g.mul(frequency, &inv)?;
    g.add(&s, &f)
}

fn spatial_block(g: &mut Tape, v: &Var, params: &Bound, prefix: &str) -> Result<Var> {
    let t = g.conv2d(
        v,
        params.get(&format!("{prefix}.conv1.weight"))?,
        Some(params.get(&format!("{prefix}.conv1.bias"))?),
        1,
        1,
    )?;
    let t = g.gelu(&t)?;
    let t = g.conv2d(
        &t,
        params.get(&format!("{prefix}.conv2.weight"))?,
        Some(params.get(&format!("{prefix}.conv2.bias"))?),
        1,
        1,
    )?;
    g.add(&t, v)
}

fn freq_block(g: &mut Tape, v: &Var, params: &Bound, prefix: &str) -> Result<Var> {
    let t = g.layer_norm(
        v,
        params.get(&format!("{prefix}.norm.gamma"))?,
        params.get(&format!("{prefix}.norm.beta"))?,
        NORM_EPSILON,
    )?;
    let t = fre_mlp(g, &t, params, &format!("{prefix}.fre_mlp"))?;
    g.add(&t, v)
}

fn decoder_level(
    g: &mut Tape,
    v: &Var,
    skip: &Var,
    params: &Bound,
    prefix: &str,
    skip_mode: SkipMode,
) -> Result<Var> {
    let t = g.conv2d(
        v,
        params.get(&format!("{prefix}.expand.weight"))?,
        Some(params.get(&format!("{prefix}.expand.bias"))?),
        1,
        0,
    )?;
    let up = g.pixel_shuffle(&t, 2)?;
    match skip_mode {
        SkipMode::Concat => {
            let cat = g.concat_channels(&up, skip)?;
            g.conv2d(
                &cat,
                params.get(&format!("{prefix}.merge.weight"))?,
                Some(params.get(&format!("{prefix}.merge.bias"))?),
                1,
                1,
            )
        }
        SkipMode::Add => g.add(&up, skip),
    }
}

/// Whole denoiser stage on the tape. `x` is the original low-light input
/// (also the global-residual prior), `x_lol` the unclipped illumination
/// stage output, `snr` the (N,1,H,W) reliability map treated as a
/// constant. Returns the *unclipped* prediction.
///
/// Inputs whose extents are not multiples of 4 are reflect-padded and the
/// output is cropped back.
pub fn run_denoiser(
    g: &mut Tape,
    x: &Var,
    x_lol: &Var,
    snr: &Var,
    params: &Bound,
    cfg: &ModelConfig,
) -> Result<Var> {
    if g.shape(x) != g.shape(x_lol) {
        return Err(Error::dim(
            "run_denoiser inputs",
            format!("{:?}", g.shape(x)),
            format!("{:?}", g.shape(x_lol)),
        ));
    }
    let (_, _, h, w) = match g.shape(x) {
        &[n, c, h, w] => (n, c, h, w),
        other => return Err(Error::dim("run_denoiser", "4-D input", format!("{other:?}"))),
    };

    let hp = h.div_ceil(4) * 4;
    let wp = w.div_ceil(4) * 4;
    let pads = [0, hp - h, 0, wp - w];
    let needs_pad = hp != h || wp != w;
    let (xp, lolp, snrp) = if needs_pad {
        (
            g.reflect_pad(x, pads)?,
            g.reflect_pad(x_lol, pads)?,
            g.reflect_pad(snr, pads)?,
        )
    } else {
        (x.clone(), x_lol.clone(), snr.clone())
    };

    let inp = g.concat_channels(&lolp, &xp)?;
    let skip_full = g.conv2d(
        &inp,
        params.get("den.conv_in.weight")?,
        Some(params.get("den.conv_in.bias")?),
        1,
        1,
    )?;
    let skip_half = g.conv2d(
        &skip_full,
        params.get("den.down1.weight")?,
        Some(params.get("den.down1.bias")?),
        2,
        1,
    )?;
    let bottom = g.conv2d(
        &skip_half,
        params.get("den.down2.weight")?,
        Some(params.get("den.down2.bias")?),
        2,
        1,
    )?;

    let mut o_s = bottom.clone();
    for k in 0..2 {
        o_s = spatial_block(g, &o_s, params, &format!("den.spatial{k}"))?;
    }
    let mut o_f = bottom.clone();
    for k in 0..2 {
        o_f = freq_block(g, &o_f, params, &format!("den.freq{k}"))?;
    }

    let r_q = g.bilinear_resize(&snrp, hp / 4, wp / 4)?;
    let fused = snr_fuse(g, &o_s, &o_f, &r_q)?;

    let up_half = decoder_level(g, &fused, &skip_half, params, "den.dec0", cfg.skip_mode)?;
    let up_full = decoder_level(g, &up_half, &skip_full, params, "den.dec1", cfg.skip_mode)?;

    let head = g.conv2d(
        &up_full,
        params.get("den.head.weight")?,
        Some(params.get("den.head.bias")?),
        1,
        1,
    )?;
    let out = g.add(&head, &xp)?;
    if needs_pad {
        g.crop(&out, 0, 0, h, w)
    } else {
        Ok(out)
    }
}
