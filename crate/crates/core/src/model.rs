//! End-to-end model assembly: configuration, parameter enumeration and
//! initialization, forward execution, and the analytic parameter/FLOP
//! accounting.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::denoiser;
use crate::error::{Error, Result};
use crate::fie;
use crate::snr;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::weights::WeightStore;

/// How decoder levels merge their encoder skip connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipMode {
    /// Channel concatenation followed by a 3x3 merge convolution.
    Concat,
    /// Element-wise addition; no merge weights.
    Add,
}

impl SkipMode {
    pub fn parse(s: &str) -> Result<SkipMode> {
        match s {
            "concat" => Ok(SkipMode::Concat),
            "add" => Ok(SkipMode::Add),
            other => Err(Error::InvalidArgument(format!(
                "skip_mode must be `concat` or `add`, got `{other}`"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SkipMode::Concat => "concat",
            SkipMode::Add => "add",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Channel width of every block.
    pub nc: usize,
    pub skip_mode: SkipMode,
    /// Illumination-stage block count at half resolution.
    pub fie_blocks: usize,
    /// Gated FFN expands to 2*e*nc channels before the gate halves them.
    pub ffn_expansion: usize,
    /// Box-blur kernel size of the SNR map.
    pub snr_blur: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            nc: 16,
            skip_mode: SkipMode::Concat,
            fie_blocks: 6,
            ffn_expansion: 2,
            snr_blur: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nc < 1 {
            return Err(Error::InvalidArgument("nc must be >= 1".into()));
        }
        if self.fie_blocks < 1 {
            return Err(Error::InvalidArgument("fie_blocks must be >= 1".into()));
        }
        if self.ffn_expansion < 1 {
            return Err(Error::InvalidArgument("ffn_expansion must be >= 1".into()));
        }
        if self.snr_blur < 1 || self.snr_blur % 2 == 0 {
            return Err(Error::InvalidArgument("snr_blur must be odd and >= 1".into()));
        }
        Ok(())
    }
}

/// Both stage outputs, clipped to [0,1] and shaped like the input.
#[derive(Debug, Clone)]
pub struct EnhanceResult {
    pub x_lol: Tensor,
    pub x_hat: Tensor,
}

/// Every parameter tensor of the configured architecture, in forward
/// order: (name, shape). Weight initialization, binding, loading and the
/// serialized manifest all follow this enumeration.
pub fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let nc = cfg.nc;
    let c2 = 2 * nc;
    let ffn = 2 * cfg.ffn_expansion * nc;
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut p = |name: String, shape: Vec<usize>| specs.push((name, shape));

    p("fie.conv_in.weight".into(), vec![nc, 3, 3, 3]);
    p("fie.conv_in.bias".into(), vec![nc]);
    for k in 0..cfg.fie_blocks {
        let b = format!("fie.block{k}");
        p(format!("{b}.norm1.gamma"), vec![nc]);
        p(format!("{b}.norm1.beta"), vec![nc]);
        p(format!("{b}.fre_mlp.conv1.weight"), vec![c2, c2, 1, 1]);
        p(format!("{b}.fre_mlp.conv1.bias"), vec![c2]);
        p(format!("{b}.fre_mlp.conv2.weight"), vec![c2, c2, 1, 1]);
        p(format!("{b}.fre_mlp.conv2.bias"), vec![c2]);
        p(format!("{b}.norm2.gamma"), vec![nc]);
        p(format!("{b}.norm2.beta"), vec![nc]);
        p(format!("{b}.ffn.expand.weight"), vec![ffn, nc, 1, 1]);
        p(format!("{b}.ffn.expand.bias"), vec![ffn]);
        p(format!("{b}.ffn.project.weight"), vec![nc, ffn / 2, 1, 1]);
        p(format!("{b}.ffn.project.bias"), vec![nc]);
    }
    p("fie.conv_out.weight".into(), vec![3, nc, 3, 3]);
    p("fie.conv_out.bias".into(), vec![3]);

    p("den.conv_in.weight".into(), vec![nc, 6, 3, 3]);
    p("den.conv_in.bias".into(), vec![nc]);
    p("den.down1.weight".into(), vec![nc, nc, 3, 3]);
    p("den.down1.bias".into(), vec![nc]);
    p("den.down2.weight".into(), vec![nc, nc, 3, 3]);
    p("den.down2.bias".into(), vec![nc]);
    for k in 0..2 {
        let b = format!("den.spatial{k}");
        p(format!("{b}.conv1.weight"), vec![nc, nc, 3, 3]);
        p(format!("{b}.conv1.bias"), vec![nc]);
        p(format!("{b}.conv2.weight"), vec![nc, nc, 3, 3]);
        p(format!("{b}.conv2.bias"), vec![nc]);
    }
    for k in 0..2 {
        let b = format!("den.freq{k}");
        p(format!("{b}.norm.gamma"), vec![nc]);
        p(format!("{b}.norm.beta"), vec![nc]);
        p(format!("{b}.fre_mlp.conv1.weight"), vec![c2, c2, 1, 1]);
        p(format!("{b}.fre_mlp.conv1.bias"), vec![c2]);
        p(format!("{b}.fre_mlp.conv2.weight"), vec![c2, c2, 1, 1]);
        p(format!("{b}.fre_mlp.conv2.bias"), vec![c2]);
    }
    for k in 0..2 {
        let b = format!("den.dec{k}");
        p(format!("{b}.expand.weight"), vec![4 * nc, nc, 1, 1]);
        p(format!("{b}.expand.bias"), vec![4 * nc]);
        if cfg.skip_mode == SkipMode::Concat {
            p(format!("{b}.merge.weight"), vec![nc, 2 * nc, 3, 3]);
            p(format!("{b}.merge.bias"), vec![nc]);
        }
    }
    p("den.head.weight".into(), vec![3, nc, 3, 3]);
    p("den.head.bias".into(), vec![3]);

    specs
}

/// Exact scalar parameter count, computed in closed form; deliberately a
/// separate code path from [`param_specs`] so the two can cross-check.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let nc = cfg.nc;
    let e = cfg.ffn_expansion;
    let conv = |cout: usize, cin: usize, k: usize| cout * cin * k * k + cout;
    let norm = 2 * nc;
    let fre_mlp = 2 * conv(2 * nc, 2 * nc, 1);
    let ffn = conv(2 * e * nc, nc, 1) + conv(nc, e * nc, 1);
    let fie_block = 2 * norm + fre_mlp + ffn;
    let fie = conv(nc, 3, 3) + cfg.fie_blocks * fie_block + conv(3, nc, 3);

    let spatial_block = 2 * conv(nc, nc, 3);
    let freq_block = norm + fre_mlp;
    let merge = match cfg.skip_mode {
        SkipMode::Concat => conv(nc, 2 * nc, 3),
        SkipMode::Add => 0,
    };
    let dec_level = conv(4 * nc, nc, 1) + merge;
    let den = conv(nc, 6, 3)
        + 2 * conv(nc, nc, 3)
        + 2 * spatial_block
        + 2 * freq_block
        + 2 * dec_level
        + conv(3, nc, 3);

    fie + den
}

/// Kaiming-uniform fan-in init for conv weights, zeros for biases and
/// norm betas, ones for norm gammas. Fully seeded.
pub fn init_weights(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for (name, shape) in param_specs(cfg) {
        let tensor = if name.ends_with(".gamma") {
            Tensor::filled(&shape, 1.0)
        } else if name.ends_with(".bias") || name.ends_with(".beta") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f32).sqrt();
            let data: Vec<f32> = (0..shape.iter().product::<usize>())
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            Tensor::from_vec(&shape, data)?
        };
        store.insert(name, tensor)?;
    }
    Ok(store)
}

/// Check a store against the config-derived shapes, naming the first
/// offending tensor.
pub fn validate_weights(store: &WeightStore, cfg: &ModelConfig) -> Result<()> {
    let specs = param_specs(cfg);
    for (name, shape) in &specs {
        match store.get(name) {
            None => return Err(Error::WeightMissing(name.clone())),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(Error::WeightShapeMismatch {
                    name: name.clone(),
                    expected: format!("{shape:?}"),
                    got: format!("{:?}", t.shape()),
                });
            }
            _ => {}
        }
    }
    if store.len() != specs.len() {
        let known: HashMap<&str, ()> = specs.iter().map(|(n, _)| (n.as_str(), ())).collect();
        let extra = store
            .entries()
            .iter()
            .find(|(n, _)| !known.contains_key(n.as_str()))
            .map(|(n, _)| n.clone())
            .unwrap_or_default();
        return Err(Error::WeightShapeMismatch {
            name: extra,
            expected: "no such tensor for this config".into(),
            got: "present in store".into(),
        });
    }
    Ok(())
}

/// Save to disk (see [`crate::weights`] for the container format).
pub fn save_weights(store: &WeightStore, path: &std::path::Path) -> Result<()> {
    store.save(path)
}

/// Load from disk and validate every shape against `cfg` before returning.
pub fn load_weights(path: &std::path::Path, cfg: &ModelConfig) -> Result<WeightStore> {
    let store = WeightStore::load(path)?;
    validate_weights(&store, cfg)?;
    Ok(store)
}

/// Parameters bound onto a tape, addressable by name and iterable in
/// store order (which keeps optimizer traversal deterministic).
pub struct Bound {
    ordered: Vec<(String, Var)>,
    index: HashMap<String, usize>,
}

impl Bound {
    /// Assemble a binding from already-placed tape vars (used by training
    /// and by gradient checks that perturb parameters directly).
    pub fn from_vars(pairs: Vec<(String, Var)>) -> Bound {
        let index = pairs
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        Bound {
            ordered: pairs,
            index,
        }
    }

    pub fn get(&self, name: &str) -> Result<&Var> {
        self.index
            .get(name)
            .map(|&i| &self.ordered[i].1)
            .ok_or_else(|| Error::WeightMissing(name.to_string()))
    }

    pub fn ordered(&self) -> &[(String, Var)] {
        &self.ordered
    }
}

/// Insert every store tensor into the tape as a leaf.
pub fn bind(g: &mut Tape, store: &WeightStore, trainable: bool) -> Result<Bound> {
    let mut ordered = Vec::with_capacity(store.len());
    let mut index = HashMap::new();
    for (name, tensor) in store.entries() {
        let var = g.input(tensor.clone(), trainable)?;
        index.insert(name.clone(), ordered.len());
        ordered.push((name.clone(), var));
    }
    Ok(Bound { ordered, index })
}

/// Full two-stage forward on an existing tape. Returns the *unclipped*
/// intermediate and final images; the caller clips for display/metrics
/// while losses read the raw values.
pub fn forward_on_tape(
    g: &mut Tape,
    x: &Var,
    params: &Bound,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let x_lol = fie::enhance_illumination(g, x, params, cfg)?;
    // The SNR map is a fixed guidance signal derived from the clipped
    // intermediate; gradients do not flow through it.
    let x_lol_clipped = g.value(&x_lol).clipped(0.0, 1.0);
    let snr = snr::compute_snr_map(&x_lol_clipped, cfg.snr_blur, snr::SNR_EPSILON)?;
    let snr_var = g.constant(snr.values)?;
    let x_hat = denoiser::run_denoiser(g, x, &x_lol, &snr_var, params, cfg)?;
    Ok((x_lol, x_hat))
}

/// Deterministic single-image (or batch) forward: x in [0,1], shape
/// (N,3,H,W). Output values are clipped into [0,1].
pub fn forward(x: &Tensor, store: &WeightStore, cfg: &ModelConfig) -> Result<EnhanceResult> {
    cfg.validate()?;
    validate_weights(store, cfg)?;
    let (_, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(Error::dim("forward input", "3 channels", format!("{c}")));
    }
    if h < 2 || w < 2 {
        return Err(Error::InvalidArgument(format!(
            "forward input must be at least 2x2, got {h}x{w}"
        )));
    }
    x.validate_finite("forward input")?;
    if x.min_value() < 0.0 || x.max_value() > 1.0 {
        return Err(Error::InvalidArgument(
            "forward input values must lie in [0,1]".into(),
        ));
    }

    let mut g = Tape::inference();
    let params = bind(&mut g, store, false)?;
    let xv = g.input(x.clone(), false)?;
    let (x_lol, x_hat) = forward_on_tape(&mut g, &xv, &params, cfg)?;
    Ok(EnhanceResult {
        x_lol: g.value(&x_lol).clipped(0.0, 1.0),
        x_hat: g.value(&x_hat).clipped(0.0, 1.0),
    })
}

/// Forward over a batch of independent images; with `parallel` the items
/// are split across worker threads. Items are computed independently, so
/// results do not depend on the worker count.
pub fn enhance_batch(
    xs: &[Tensor],
    store: &WeightStore,
    cfg: &ModelConfig,
    parallel: bool,
) -> Result<Vec<EnhanceResult>> {
    if parallel {
        use rayon::prelude::*;
        xs.par_iter().map(|x| forward(x, store, cfg)).collect()
    } else {
        xs.iter().map(|x| forward(x, store, cfg)).collect()
    }
}

fn fft_flops(h: usize, w: usize, channels: usize) -> f64 {
    let hw = (h * w) as f64;
    5.0 * hw * hw.log2() * channels as f64
}

fn conv_flops(cout: usize, cin: usize, k: usize, h: usize, w: usize) -> f64 {
    let hw = (h * w) as f64;
    2.0 * (cout * cin * k * k) as f64 * hw + cout as f64 * hw
}

/// Analytic FLOP count of one N=1 forward pass at the given resolution.
///
/// Conventions: one multiply-accumulate = 2 FLOPs; an FFT over an H×W
/// plane costs 5·HW·log2(HW) per channel; elementwise and norm passes
/// count once per element. Mirrors the layer walk of [`forward_on_tape`].
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<f64> {
    cfg.validate()?;
    if h < 16 || w < 16 {
        return Err(Error::InvalidArgument(format!(
            "count_flops needs H,W >= 16, got {h}x{w}"
        )));
    }
    let nc = cfg.nc;
    let e = cfg.ffn_expansion;
    let el = |c: usize, h: usize, w: usize| (c * h * w) as f64;

    let (h2, w2) = (h / 2, w / 2);
    let mut fie = 0.0;
    fie += el(3, h2, w2); // bilinear downsample
    fie += conv_flops(nc, 3, 3, h2, w2);
    let mut block = 0.0;
    block += el(nc, h2, w2); // norm1
    block += fft_flops(h2, w2, nc); // fre_mlp fft
    block += 2.0 * conv_flops(2 * nc, 2 * nc, 1, h2, w2);
    block += el(2 * nc, h2, w2); // activation
    block += fft_flops(h2, w2, nc); // fre_mlp ifft
    block += el(nc, h2, w2); // residual add
    block += el(nc, h2, w2); // norm2
    block += conv_flops(2 * e * nc, nc, 1, h2, w2);
    block += el(e * nc, h2, w2); // gate
    block += conv_flops(nc, e * nc, 1, h2, w2);
    block += el(nc, h2, w2); // residual add
    fie += cfg.fie_blocks as f64 * block;
    fie += conv_flops(3, nc, 3, h2, w2);
    fie += 2.0 * el(3, h2, w2); // softplus + epsilon
    fie += el(3, h, w); // bilinear upsample of the map
    fie += fft_flops(h, w, 3); // full-resolution fft
    fie += el(6, h, w); // amplitude division (packed planes)
    fie += fft_flops(h, w, 3); // ifft back to image space

    // SNR map on the intermediate image.
    let k = cfg.snr_blur;
    let mut snr_cost = 0.0;
    snr_cost += el(3, h, w); // channel mean
    snr_cost += conv_flops(1, 1, k, h, w); // box blur
    snr_cost += 4.0 * el(1, h, w); // |g-g'|, divide, normalize, clamp

    // Denoiser runs at the padded resolution.
    let hp = h.div_ceil(4) * 4;
    let wp = w.div_ceil(4) * 4;
    let (hh, wh) = (hp / 2, wp / 2);
    let (hq, wq) = (hp / 4, wp / 4);
    let mut den = 0.0;
    den += conv_flops(nc, 6, 3, hp, wp);
    den += conv_flops(nc, nc, 3, hh, wh); // stride-2 down1
    den += conv_flops(nc, nc, 3, hq, wq); // stride-2 down2
    for _ in 0..2 {
        // spatial residual block
        den += 2.0 * conv_flops(nc, nc, 3, hq, wq);
        den += el(nc, hq, wq); // activation
        den += el(nc, hq, wq); // residual add
    }
    for _ in 0..2 {
        // frequency block
        den += el(nc, hq, wq); // norm
        den += 2.0 * fft_flops(hq, wq, nc);
        den += 2.0 * conv_flops(2 * nc, 2 * nc, 1, hq, wq);
        den += el(2 * nc, hq, wq); // activation
        den += el(nc, hq, wq); // residual add
    }
    den += el(1, hq, wq); // SNR map resize
    den += 2.0 * el(1, hq, wq); // 1 - R
    den += 3.0 * el(nc, hq, wq); // two products and the sum of Eq-style fusion
    for level in 0..2 {
        let (mh, mw) = if level == 0 { (hq, wq) } else { (hh, wh) };
        let (oh, ow) = if level == 0 { (hh, wh) } else { (hp, wp) };
        den += conv_flops(4 * nc, nc, 1, mh, mw);
        match cfg.skip_mode {
            SkipMode::Concat => den += conv_flops(nc, 2 * nc, 3, oh, ow),
            SkipMode::Add => den += el(nc, oh, ow),
        }
    }
    den += conv_flops(3, nc, 3, hp, wp);
    den += el(3, hp, wp); // global residual add

    Ok(fie + snr_cost + den)
}
