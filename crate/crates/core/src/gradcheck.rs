//! Central finite-difference validation of the tape's backward rules.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Step size mandated for the checks; reductions run in f64.
pub const GRAD_CHECK_H: f32 = 1e-3;

fn loss_f64(t: &Tensor) -> f64 {
    t.data().iter().map(|&v| v as f64).sum()
}

fn analytic_grads<F>(f: &F, inputs: &[(&str, Tensor)]) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut g = Tape::recording();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(_, t)| g.input(t.clone(), true))
        .collect::<Result<_>>()?;
    let out = f(&mut g, &vars)?;
    let loss = g.sum_all(&out)?;
    g.backward(&loss)?;
    inputs
        .iter()
        .zip(&vars)
        .map(|((name, t), v)| {
            let grad = match g.grad(v) {
                Some(grad) => grad.clone(),
                None => Tensor::zeros(t.shape()),
            };
            if let Some((i, &bad)) = grad
                .data()
                .iter()
                .enumerate()
                .find(|(_, v)| !v.is_finite())
            {
                return Err(Error::GradCheck {
                    parameter: name.to_string(),
                    reason: format!("non-finite gradient {bad} at element {i}"),
                });
            }
            Ok(grad)
        })
        .collect()
}

fn eval_loss<F>(f: &F, inputs: &[(&str, Tensor)]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut g = Tape::inference();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(_, t)| g.input(t.clone(), false))
        .collect::<Result<_>>()?;
    let out = f(&mut g, &vars)?;
    Ok(loss_f64(g.value(&out)))
}

/// Central-difference check: perturbs every element of every input by
/// +-h and compares the numeric gradient against the tape's gradient of
/// sum(output), one relative error per parameter tensor:
///
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
///
/// with |.| the L2 norm over the parameter. The per-tensor norm keeps a
/// single near-zero gradient entry from being swamped by f32 evaluation
/// noise while still catching any wrong backward rule. Returns the max
/// over parameters, or an error naming the worst parameter when it
/// exceeds `tolerance`.
pub fn grad_check<F>(f: F, inputs: &[(&str, Tensor)], tolerance: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(&f, inputs)?;
    let h = GRAD_CHECK_H;
    let mut max_rel = 0.0f64;
    let mut worst = inputs[0].0.to_string();

    for (k, (name, tensor)) in inputs.iter().enumerate() {
        let mut diff_sq = 0.0f64;
        let mut a_sq = 0.0f64;
        let mut n_sq = 0.0f64;
        for i in 0..tensor.numel() {
            let mut bumped: Vec<(&str, Tensor)> = inputs.to_vec();
            bumped[k].1.data_mut()[i] = tensor.data()[i] + h;
            let lp = eval_loss(&f, &bumped)?;
            bumped[k].1.data_mut()[i] = tensor.data()[i] - h;
            let lm = eval_loss(&f, &bumped)?;
            let numeric = (lp - lm) / (2.0 * h as f64);
            let a = analytic[k].data()[i] as f64;
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        let rel = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = name.to_string();
        }
    }

    if max_rel > tolerance {
        return Err(Error::GradCheck {
            parameter: worst,
            reason: format!("relative error {max_rel:.3e} exceeds tolerance {tolerance:.3e}"),
        });
    }
    Ok(max_rel)
}

/// Directional variant for deep compositions: perturbs all inputs along a
/// random direction and compares the directional derivative. Same h, same
/// relative-error definition; one direction per seed.
pub fn grad_check_directional<F>(
    f: F,
    inputs: &[(&str, Tensor)],
    seed: u64,
    tolerance: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(&f, inputs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let directions: Vec<Tensor> = inputs
        .iter()
        .map(|(_, t)| {
            let data: Vec<f32> = (0..t.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_vec(t.shape(), data).expect("direction shape")
        })
        .collect();

    let h = GRAD_CHECK_H;
    let bump = |sign: f32| -> Vec<(&str, Tensor)> {
        inputs
            .iter()
            .zip(&directions)
            .map(|((name, t), d)| {
                let mut t = t.clone();
                for (v, &dv) in t.data_mut().iter_mut().zip(d.data()) {
                    *v += sign * h * dv;
                }
                (*name, t)
            })
            .collect()
    };
    let lp = eval_loss(&f, &bump(1.0))?;
    let lm = eval_loss(&f, &bump(-1.0))?;
    let numeric = (lp - lm) / (2.0 * h as f64);

    let mut a = 0.0f64;
    for (grad, dir) in analytic.iter().zip(&directions) {
        for (&gv, &dv) in grad.data().iter().zip(dir.data()) {
            a += gv as f64 * dv as f64;
        }
    }
    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
    if rel > tolerance {
        return Err(Error::GradCheck {
            parameter: format!("direction(seed={seed})"),
            reason: format!("relative error {rel:.3e} exceeds tolerance {tolerance:.3e}"),
        });
    }
    Ok(rel)
}
