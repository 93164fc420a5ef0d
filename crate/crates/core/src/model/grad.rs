use rand::Rng;

use super::net::{self, NetInput, NetTarget};
use super::spec::{Example, Input, ModelKind, ParamVector, TargetModel, GradientVector, CONV_KERNEL};
use crate::error::{Error, Result};
use crate::rng;

/// Fan-based uniform initialization: each weight matrix draws from
/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
pub fn init_params(model: &TargetModel, seed: u64) -> ParamVector {
    let mut rng = rng::stream(seed);
    let mut w = vec![0.0; model.num_params()];
    if let Some(c) = model.conv {
        let area = CONV_KERNEL * CONV_KERNEL;
        let a = (6.0 / ((c.in_channels + c.out_channels) * area) as f64).sqrt();
        for v in &mut w[c.weight..c.bias] {
            *v = rng.random_range(-a..=a);
        }
    }
    for d in &model.dense {
        let a = (6.0 / (d.inputs + d.outputs) as f64).sqrt();
        for v in &mut w[d.weight..d.bias] {
            *v = rng.random_range(-a..=a);
        }
    }
    w.into()
}

fn check_params(model: &TargetModel, w: &[f64]) -> Result<()> {
    if w.len() != model.num_params() {
        return Err(Error::Shape(format!(
            "expected {} parameters, got {}",
            model.num_params(),
            w.len()
        )));
    }
    Ok(())
}

/// Logits of `f_w(x)`: `num_classes` values, or `seq_len × vocab` for `embed-lm`.
pub fn forward(model: &TargetModel, w: &[f64], input: &Input) -> Result<Vec<f64>> {
    check_params(model, w)?;
    match input {
        Input::Pixels(px) => net::logits(model, w, NetInput::Pixels(px)),
        Input::Tokens(ids) => {
            check_tokens(model, ids)?;
            let emb = net::embed::<f64>(model, ids);
            net::logits(model, w, NetInput::Embedded(&emb))
        }
    }
}

fn check_tokens(model: &TargetModel, ids: &[u32]) -> Result<()> {
    let vocab = model
        .vocab()
        .ok_or_else(|| Error::Shape("token input for a vision model".into()))?;
    if let Some(&t) = ids.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::Shape(format!("token id {t} outside vocab {vocab}")));
    }
    Ok(())
}

/// Softmax cross-entropy loss of one example and its exact gradient with
/// respect to the trainable weights. For `embed-lm` the loss sums the
/// next-token cross-entropies over all positions.
pub fn loss_and_grad(model: &TargetModel, w: &[f64], example: &Example) -> Result<(f64, GradientVector)> {
    check_params(model, w)?;
    model.check_example(example)?;
    let out = match &example.input {
        Input::Pixels(px) => net::backprop(model, w, NetInput::Pixels(px), class_target(example)?, false)?,
        Input::Tokens(ids) => {
            let emb = net::embed::<f64>(model, ids);
            let target = match model.kind() {
                ModelKind::EmbedLm => NetTarget::Tokens(ids),
                _ => class_target(example)?,
            };
            net::backprop(model, w, NetInput::Embedded(&emb), target, false)?
        }
    };
    Ok((out.loss, out.grad_w.into()))
}

fn class_target<'a>(example: &Example) -> Result<NetTarget<'a, f64>> {
    example
        .label
        .map(NetTarget::Class)
        .ok_or_else(|| Error::Shape("classifier example needs a label".into()))
}

/// Loss only; used by the finite-difference oracle.
pub fn loss(model: &TargetModel, w: &[f64], example: &Example) -> Result<f64> {
    loss_and_grad(model, w, example).map(|(l, _)| l)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Finite-difference estimate of [`loss_and_grad`]'s gradient.
pub fn finite_diff_grad(model: &TargetModel, w: &[f64], example: &Example, h: f64) -> Result<GradientVector> {
    check_params(model, w)?;
    model.check_example(example)?;
    central_difference(|p| loss(model, p, example), w, h).map(Into::into)
}

/// Largest coordinate error relative to the largest gradient magnitude.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        / scale
}
