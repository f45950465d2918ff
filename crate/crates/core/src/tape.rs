//! Reverse-mode autodiff over a linear tape of eagerly-evaluated ops.
//!
//! A [`Tape`] owns every intermediate tensor; a [`Var`] is a cheap handle
//! into it. In recording mode all values are retained and `backward`
//! replays the tape in reverse, accumulating gradients by addition. In
//! inference mode nothing is retained beyond live handles: dropping the
//! last `Var` for a node releases its buffer, which keeps peak memory at
//! eager-evaluation levels for large images.

use std::cell::RefCell;
use std::rc::{Rc, Weak};

use crate::error::{Error, Result};
use crate::fft;
use crate::ops;
use crate::tensor::Tensor;

const GELU_A: f32 = 0.797_884_56; // sqrt(2/pi)
const GELU_B: f32 = 0.044_715;

fn gelu_value(x: f32) -> f32 {
    let u = GELU_A * (x + GELU_B * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_derivative(x: f32) -> f32 {
    let u = GELU_A * (x + GELU_B * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_B * x * x)
}

/// Handle to a tape node. Clone is cheap; the last clone to drop lets the
/// tape reclaim the node's buffer in inference mode.
pub struct Var {
    id: usize,
    _live: Rc<Live>,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }
}

impl Clone for Var {
    fn clone(&self) -> Self {
        Var {
            id: self.id,
            _live: Rc::clone(&self._live),
        }
    }
}

struct Live {
    id: usize,
    freed: Weak<RefCell<Vec<usize>>>,
}

impl Drop for Live {
    fn drop(&mut self) {
        if let Some(freed) = self.freed.upgrade() {
            freed.borrow_mut().push(self.id);
        }
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f32),
    Abs(usize),
    SqrtEps(usize),
    Gelu(usize),
    Softplus(usize),
    SumAll(usize),
    MeanAll(usize),
    ConcatC(usize, usize),
    BroadcastC(usize),
    ChannelMean(usize),
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        stride: usize,
        padding: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f32,
    },
    SimpleGate(usize),
    PixelShuffle(usize, usize),
    Bilinear(usize),
    Fft2Packed(usize),
    Ifft2RealPacked(usize),
    ReflectPad(usize, [usize; 4]),
    Crop {
        p: usize,
        top: usize,
        left: usize,
    },
}

struct Node {
    value: Option<Tensor>,
    shape: Vec<usize>,
    requires_grad: bool,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    recording: bool,
    freed: Rc<RefCell<Vec<usize>>>,
}

impl Tape {
    /// Tape that retains every value so `backward` can run.
    pub fn recording() -> Tape {
        Tape::with_mode(true)
    }

    /// Tape that frees intermediates as their handles drop; `backward`
    /// is unavailable.
    pub fn inference() -> Tape {
        Tape::with_mode(false)
    }

    fn with_mode(recording: bool) -> Tape {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording,
            freed: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    fn sweep(&mut self) {
        if self.recording {
            return;
        }
        let freed: Vec<usize> = self.freed.borrow_mut().drain(..).collect();
        for id in freed {
            self.nodes[id].value = None;
        }
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.sweep();
        let id = self.nodes.len();
        self.nodes.push(Node {
            shape: value.shape().to_vec(),
            value: Some(value),
            requires_grad: requires_grad && self.recording,
            op,
        });
        self.grads.push(None);
        Var {
            id,
            _live: Rc::new(Live {
                id,
                freed: Rc::downgrade(&self.freed),
            }),
        }
    }

    /// Insert a leaf tensor. NaN/Inf are rejected at this boundary.
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.validate_finite("tape input")?;
        Ok(self.push(value, requires_grad, Op::Leaf))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.input(value, false)
    }

    pub fn value(&self, v: &Var) -> &Tensor {
        self.nodes[v.id]
            .value
            .as_ref()
            .expect("tape value already freed; hold the Var for as long as it is needed")
    }

    pub fn tensor(&self, v: &Var) -> Tensor {
        self.value(v).clone()
    }

    pub fn shape(&self, v: &Var) -> &[usize] {
        &self.nodes[v.id].shape
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if any reached it.
    pub fn grad(&self, v: &Var) -> Option<&Tensor> {
        self.grads[v.id].as_ref()
    }

    fn req(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn val(&self, id: usize) -> &Tensor {
        self.nodes[id]
            .value
            .as_ref()
            .expect("parent value present during op construction")
    }

    fn same_shape(&self, a: &Var, b: &Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                what,
                format!("{:?}", self.shape(a)),
                format!("{:?}", self.shape(b)),
            ));
        }
        Ok(())
    }

    // Elementwise binary ops (shapes must match exactly).

    pub fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.val(a.id).zip_map(self.val(b.id), |x, y| x + y)?;
        Ok(self.push(out, self.req(&[a.id, b.id]), Op::Add(a.id, b.id)))
    }

    pub fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.val(a.id).zip_map(self.val(b.id), |x, y| x - y)?;
        Ok(self.push(out, self.req(&[a.id, b.id]), Op::Sub(a.id, b.id)))
    }

    pub fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.val(a.id).zip_map(self.val(b.id), |x, y| x * y)?;
        Ok(self.push(out, self.req(&[a.id, b.id]), Op::Mul(a.id, b.id)))
    }

    pub fn div(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let out = self.val(a.id).zip_map(self.val(b.id), |x, y| x / y)?;
        Ok(self.push(out, self.req(&[a.id, b.id]), Op::Div(a.id, b.id)))
    }

    pub fn add_scalar(&mut self, a: &Var, s: f32) -> Result<Var> {
        let out = self.val(a.id).map(|x| x + s);
        Ok(self.push(out, self.req(&[a.id]), Op::AddScalar(a.id)))
    }

    pub fn mul_scalar(&mut self, a: &Var, s: f32) -> Result<Var> {
        let out = self.val(a.id).map(|x| x * s);
        Ok(self.push(out, self.req(&[a.id]), Op::MulScalar(a.id, s)))
    }

    pub fn abs(&mut self, a: &Var) -> Result<Var> {
        let out = self.val(a.id).map(f32::abs);
        Ok(self.push(out, self.req(&[a.id]), Op::Abs(a.id)))
    }

    /// sqrt(x + eps); the offset keeps the derivative bounded near zero.
    pub fn sqrt_eps(&mut self, a: &Var, eps: f32) -> Result<Var> {
        let out = self.val(a.id).map(|x| (x + eps).sqrt());
        Ok(self.push(out, self.req(&[a.id]), Op::SqrtEps(a.id)))
    }

    /// GELU via the tanh approximation; smooth everywhere, which keeps
    /// finite-difference gradient checks well-behaved.
    pub fn gelu(&mut self, a: &Var) -> Result<Var> {
        let out = self.val(a.id).map(gelu_value);
        Ok(self.push(out, self.req(&[a.id]), Op::Gelu(a.id)))
    }

    pub fn softplus(&mut self, a: &Var) -> Result<Var> {
        let out = self.val(a.id).map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        Ok(self.push(out, self.req(&[a.id]), Op::Softplus(a.id)))
    }

    pub fn sum_all(&mut self, a: &Var) -> Result<Var> {
        let s: f32 = self.val(a.id).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), self.req(&[a.id]), Op::SumAll(a.id)))
    }

    pub fn mean_all(&mut self, a: &Var) -> Result<Var> {
        let n = self.val(a.id).numel() as f32;
        let s: f32 = self.val(a.id).data().iter().sum();
        Ok(self.push(Tensor::scalar(s / n), self.req(&[a.id]), Op::MeanAll(a.id)))
    }

    /// Concatenate along the channel dimension.
    pub fn concat_channels(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (n, ca, h, w) = self.val(a.id).dims4()?;
        let (nb, cb, hb, wb) = self.val(b.id).dims4()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::dim(
                "concat_channels",
                format!("{n}x_x{h}x{w}"),
                format!("{nb}x_x{hb}x{wb}"),
            ));
        }
        let plane = h * w;
        let mut out = vec![0.0f32; (ca + cb) * n * plane];
        for ni in 0..n {
            let dst = ni * (ca + cb) * plane;
            out[dst..dst + ca * plane]
                .copy_from_slice(&self.val(a.id).data()[ni * ca * plane..(ni + 1) * ca * plane]);
            out[dst + ca * plane..dst + (ca + cb) * plane]
                .copy_from_slice(&self.val(b.id).data()[ni * cb * plane..(ni + 1) * cb * plane]);
        }
        let t = Tensor::from_vec(&[n, ca + cb, h, w], out)?;
        Ok(self.push(t, self.req(&[a.id, b.id]), Op::ConcatC(a.id, b.id)))
    }

    /// Repeat a (N,1,H,W) map across `channels`.
    pub fn broadcast_channels(&mut self, a: &Var, channels: usize) -> Result<Var> {
        let (n, c, h, w) = self.val(a.id).dims4()?;
        if c != 1 {
            return Err(Error::dim("broadcast_channels", "C=1", format!("C={c}")));
        }
        let plane = h * w;
        let mut out = vec![0.0f32; n * channels * plane];
        for ni in 0..n {
            let src = &self.val(a.id).data()[ni * plane..(ni + 1) * plane];
            for ci in 0..channels {
                let dst = (ni * channels + ci) * plane;
                out[dst..dst + plane].copy_from_slice(src);
            }
        }
        let t = Tensor::from_vec(&[n, channels, h, w], out)?;
        Ok(self.push(t, self.req(&[a.id]), Op::BroadcastC(a.id)))
    }

    /// Mean over channels: (N,C,H,W) -> (N,1,H,W).
    pub fn channel_mean(&mut self, a: &Var) -> Result<Var> {
        let out = self.val(a.id).channel_mean()?;
        Ok(self.push(out, self.req(&[a.id]), Op::ChannelMean(a.id)))
    }

    pub fn conv2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: Option<&Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let out = ops::conv2d(
            self.val(x.id),
            self.val(w.id),
            b.map(|b| self.val(b.id)),
            stride,
            padding,
        )?;
        let mut ids = vec![x.id, w.id];
        if let Some(b) = b {
            ids.push(b.id);
        }
        let req = self.req(&ids);
        Ok(self.push(
            out,
            req,
            Op::Conv2d {
                x: x.id,
                w: w.id,
                b: b.map(|b| b.id),
                stride,
                padding,
            },
        ))
    }

    pub fn layer_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, eps: f32) -> Result<Var> {
        let out = ops::layer_norm(self.val(x.id), self.val(gamma.id), self.val(beta.id), eps)?;
        let req = self.req(&[x.id, gamma.id, beta.id]);
        Ok(self.push(
            out,
            req,
            Op::LayerNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                eps,
            },
        ))
    }

    pub fn simple_gate(&mut self, a: &Var) -> Result<Var> {
        let out = ops::simple_gate(self.val(a.id))?;
        Ok(self.push(out, self.req(&[a.id]), Op::SimpleGate(a.id)))
    }

    pub fn pixel_shuffle(&mut self, a: &Var, r: usize) -> Result<Var> {
        let out = ops::pixel_shuffle(self.val(a.id), r)?;
        Ok(self.push(out, self.req(&[a.id]), Op::PixelShuffle(a.id, r)))
    }

    pub fn bilinear_resize(&mut self, a: &Var, out_h: usize, out_w: usize) -> Result<Var> {
        let out = ops::bilinear_resize(self.val(a.id), out_h, out_w)?;
        Ok(self.push(out, self.req(&[a.id]), Op::Bilinear(a.id)))
    }

    /// Unitary 2-D DFT with the spectrum packed as [real | imag] channels.
    pub fn fft2_packed(&mut self, a: &Var) -> Result<Var> {
        let out = fft::fft2_packed(self.val(a.id))?;
        Ok(self.push(out, self.req(&[a.id]), Op::Fft2Packed(a.id)))
    }

    /// Real part of the unitary inverse DFT of a packed spectrum.
    pub fn ifft2_real_packed(&mut self, a: &Var) -> Result<Var> {
        let out = fft::ifft2_real_packed(self.val(a.id))?;
        Ok(self.push(out, self.req(&[a.id]), Op::Ifft2RealPacked(a.id)))
    }

    pub fn reflect_pad(&mut self, a: &Var, pads: [usize; 4]) -> Result<Var> {
        let out = ops::reflect_pad(self.val(a.id), pads)?;
        Ok(self.push(out, self.req(&[a.id]), Op::ReflectPad(a.id, pads)))
    }

    pub fn crop(&mut self, a: &Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let out = ops::crop(self.val(a.id), top, left, h, w)?;
        Ok(self.push(
            out,
            self.req(&[a.id]),
            Op::Crop {
                p: a.id,
                top,
                left,
            },
        ))
    }

    /// Replay the tape in reverse from `loss` (a scalar), accumulating
    /// gradients into every reachable node that requires them.
    pub fn backward(&mut self, loss: &Var) -> Result<()> {
        if !self.recording {
            return Err(Error::InvalidArgument(
                "backward on an inference tape".into(),
            ));
        }
        if self.nodes[loss.id].shape.iter().product::<usize>() != 1 {
            return Err(Error::dim(
                "backward loss",
                "scalar",
                format!("{:?}", self.nodes[loss.id].shape),
            ));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            if self.grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            self.backprop_node(id)?;
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: usize) -> Result<()> {
        let nodes = &self.nodes;
        let (parent_grads, rest) = self.grads.split_at_mut(id);
        let gout = rest[0].as_ref().expect("grad present");

        let need = |pid: usize| nodes[pid].requires_grad;
        let val = |pid: usize| {
            nodes[pid]
                .value
                .as_ref()
                .expect("recording tape retains values")
        };
        let mut give = |pid: usize, delta: Tensor| {
            debug_assert_eq!(delta.shape(), &nodes[pid].shape[..]);
            match &mut parent_grads[pid] {
                None => parent_grads[pid] = Some(delta),
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
            }
        };

        match nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(a) {
                    give(a, gout.clone());
                }
                if need(b) {
                    give(b, gout.clone());
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    give(a, gout.clone());
                }
                if need(b) {
                    give(b, gout.map(|g| -g));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    give(a, gout.zip_map(val(b), |g, y| g * y)?);
                }
                if need(b) {
                    give(b, gout.zip_map(val(a), |g, x| g * x)?);
                }
            }
            Op::Div(a, b) => {
                if need(a) {
                    give(a, gout.zip_map(val(b), |g, y| g / y)?);
                }
                if need(b) {
                    let num = val(a);
                    let den = val(b);
                    let mut delta = gout.clone();
                    for ((d, &x), &y) in delta
                        .data_mut()
                        .iter_mut()
                        .zip(num.data())
                        .zip(den.data())
                    {
                        *d = -*d * x / (y * y);
                    }
                    give(b, delta);
                }
            }
            Op::AddScalar(a) => {
                if need(a) {
                    give(a, gout.clone());
                }
            }
            Op::MulScalar(a, s) => {
                if need(a) {
                    give(a, gout.map(|g| g * s));
                }
            }
            Op::Abs(a) => {
                if need(a) {
                    give(
                        a,
                        gout.zip_map(val(a), |g, x| {
                            if x > 0.0 {
                                g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })?,
                    );
                }
            }
            Op::SqrtEps(a) => {
                if need(a) {
                    // d sqrt(x+eps)/dx = 0.5 / y, with y this node's value.
                    let y = nodes[id].value.as_ref().expect("retained");
                    give(a, gout.zip_map(y, |g, y| 0.5 * g / y)?);
                }
            }
            Op::Gelu(a) => {
                if need(a) {
                    give(a, gout.zip_map(val(a), |g, x| g * gelu_derivative(x))?);
                }
            }
            Op::Softplus(a) => {
                if need(a) {
                    give(a, gout.zip_map(val(a), |g, x| g / (1.0 + (-x).exp()))?);
                }
            }
            Op::SumAll(a) => {
                if need(a) {
                    let g = gout.data()[0];
                    give(a, Tensor::filled(&nodes[a].shape, g));
                }
            }
            Op::MeanAll(a) => {
                if need(a) {
                    let n: usize = nodes[a].shape.iter().product();
                    let g = gout.data()[0] / n as f32;
                    give(a, Tensor::filled(&nodes[a].shape, g));
                }
            }
            Op::ConcatC(a, b) => {
                let (n, ca, h, w) = val(a).dims4()?;
                let cb = nodes[b].shape[1];
                let plane = h * w;
                if need(a) {
                    let mut ga = Tensor::zeros(&nodes[a].shape);
                    for ni in 0..n {
                        let src = ni * (ca + cb) * plane;
                        let dst = ni * ca * plane;
                        ga.data_mut()[dst..dst + ca * plane]
                            .copy_from_slice(&gout.data()[src..src + ca * plane]);
                    }
                    give(a, ga);
                }
                if need(b) {
                    let mut gb = Tensor::zeros(&nodes[b].shape);
                    for ni in 0..n {
                        let src = ni * (ca + cb) * plane + ca * plane;
                        let dst = ni * cb * plane;
                        gb.data_mut()[dst..dst + cb * plane]
                            .copy_from_slice(&gout.data()[src..src + cb * plane]);
                    }
                    give(b, gb);
                }
            }
            Op::BroadcastC(a) => {
                if need(a) {
                    let (n, c, h, w) = gout.dims4()?;
                    let plane = h * w;
                    let mut ga = Tensor::zeros(&nodes[a].shape);
                    for ni in 0..n {
                        for ci in 0..c {
                            let src = (ni * c + ci) * plane;
                            let dst = ni * plane;
                            for i in 0..plane {
                                ga.data_mut()[dst + i] += gout.data()[src + i];
                            }
                        }
                    }
                    give(a, ga);
                }
            }
            Op::ChannelMean(a) => {
                if need(a) {
                    let (n, c, h, w) = val(a).dims4()?;
                    let plane = h * w;
                    let inv = 1.0 / c as f32;
                    let mut ga = Tensor::zeros(&nodes[a].shape);
                    for ni in 0..n {
                        for ci in 0..c {
                            let dst = (ni * c + ci) * plane;
                            let src = ni * plane;
                            for i in 0..plane {
                                ga.data_mut()[dst + i] = gout.data()[src + i] * inv;
                            }
                        }
                    }
                    give(a, ga);
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                if need(x) {
                    give(
                        x,
                        ops::conv2d_backward_input(gout, val(w), &nodes[x].shape, stride, padding)?,
                    );
                }
                if need(w) {
                    give(
                        w,
                        ops::conv2d_backward_weight(gout, val(x), &nodes[w].shape, stride, padding)?,
                    );
                }
                if let Some(b) = b {
                    if need(b) {
                        give(b, ops::conv2d_backward_bias(gout)?);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, eps } => {
                let (gx, ggamma, gbeta) = ops::layer_norm_backward(val(x), val(gamma), gout, eps)?;
                if need(x) {
                    give(x, gx);
                }
                if need(gamma) {
                    give(gamma, ggamma);
                }
                if need(beta) {
                    give(beta, gbeta);
                }
            }
            Op::SimpleGate(a) => {
                if need(a) {
                    give(a, ops::simple_gate_backward(val(a), gout)?);
                }
            }
            Op::PixelShuffle(a, r) => {
                if need(a) {
                    give(a, ops::pixel_unshuffle(gout, r)?);
                }
            }
            Op::Bilinear(a) => {
                if need(a) {
                    give(a, ops::bilinear_resize_backward(gout, &nodes[a].shape)?);
                }
            }
            Op::Fft2Packed(a) => {
                if need(a) {
                    // The packed forward and real-part inverse are adjoint.
                    give(a, fft::ifft2_real_packed(gout)?);
                }
            }
            Op::Ifft2RealPacked(a) => {
                if need(a) {
                    give(a, fft::fft2_packed(gout)?);
                }
            }
            Op::ReflectPad(a, pads) => {
                if need(a) {
                    give(a, ops::reflect_pad_backward(gout, &nodes[a].shape, pads)?);
                }
            }
            Op::Crop { p, top, left } => {
                if need(p) {
                    give(p, ops::crop_backward(gout, &nodes[p].shape, top, left)?);
                }
            }
        }
        Ok(())
    }
}
