//! Forward and backward passes of the model zoo, generic over [`Scalar`].

use super::scalar::Scalar;
use super::spec::{ConvBlock, DenseBlock, ModelKind, TargetModel, CONV_KERNEL, CONV_PADDING};
use crate::error::{Error, Result};

/// Model input after token lookup.
#[derive(Clone, Copy, Debug)]
pub(crate) enum NetInput<'a, S> {
    /// CHW pixels.
    Pixels(&'a [S]),
    /// `seq_len × dim` embedded tokens, row-major.
    Embedded(&'a [S]),
}

/// Cross-entropy targets, one row per prediction (one row for classifiers,
/// `seq_len` rows for the language model).
#[derive(Clone, Copy, Debug)]
pub(crate) enum NetTarget<'a, S> {
    Class(usize),
    Tokens(&'a [u32]),
    /// Row-major probability rows; gradients with respect to them are returned.
    Soft(&'a [S]),
}

#[derive(Clone, Debug)]
pub(crate) struct Backprop<S> {
    pub loss: S,
    pub grad_w: Vec<S>,
    /// Empty unless requested.
    pub grad_input: Vec<S>,
    /// Empty unless the target is [`NetTarget::Soft`].
    pub grad_target: Vec<S>,
}

struct Trace<S> {
    /// Conv pre-activations (conv-lite only).
    conv_pre: Vec<S>,
    /// Per prediction row: layer inputs followed by the logits.
    rows: Vec<Vec<Vec<S>>>,
}

#[inline]
fn relu<S: Scalar>(v: S) -> S {
    if v.re() > 0.0 {
        v
    } else {
        S::zero()
    }
}

pub(crate) fn embed<S: Scalar>(model: &TargetModel, tokens: &[u32]) -> Vec<S> {
    let table = model.embedding.as_deref().unwrap_or(&[]);
    let dim = model.embedding_dim();
    let mut out = Vec::with_capacity(tokens.len() * dim);
    for &t in tokens {
        let row = t as usize * dim;
        out.extend(table[row..row + dim].iter().map(|&v| S::from_f64(v)));
    }
    out
}

fn dense_forward<S: Scalar>(block: &DenseBlock, w: &[S], x: &[S], activate: bool) -> Vec<S> {
    let weights = &w[block.weight..block.bias];
    let bias = &w[block.bias..block.bias + block.outputs];
    (0..block.outputs)
        .map(|o| {
            let row = &weights[o * block.inputs..(o + 1) * block.inputs];
            let mut acc = bias[o];
            for (&wi, &xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            if activate {
                relu(acc)
            } else {
                acc
            }
        })
        .collect()
}

/// Accumulates parameter gradients and returns the gradient at the layer input.
fn dense_backward<S: Scalar>(block: &DenseBlock, w: &[S], x: &[S], dy: &[S], grad_w: &mut [S]) -> Vec<S> {
    let weights = &w[block.weight..block.bias];
    let mut dx = vec![S::zero(); block.inputs];
    for (o, &d) in dy.iter().enumerate() {
        if d.is_zero() {
            continue;
        }
        let base = block.weight + o * block.inputs;
        let row = &weights[o * block.inputs..(o + 1) * block.inputs];
        for i in 0..block.inputs {
            grad_w[base + i] += d * x[i];
            dx[i] += row[i] * d;
        }
        grad_w[block.bias + o] += d;
    }
    dx
}

fn conv_forward<S: Scalar>(block: &ConvBlock, w: &[S], x: &[S]) -> Vec<S> {
    let (h, wd) = (block.height, block.width);
    let k = CONV_KERNEL;
    let pad = CONV_PADDING as isize;
    let mut out = vec![S::zero(); block.outputs()];
    for o in 0..block.out_channels {
        let b = w[block.bias + o];
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b;
                for c in 0..block.in_channels {
                    let kbase = block.weight + ((o * block.in_channels + c) * k) * k;
                    for ky in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = xx as isize + kx as isize - pad;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += w[kbase + ky * k + kx] * x[(c * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(o * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

fn conv_backward<S: Scalar>(
    block: &ConvBlock,
    w: &[S],
    x: &[S],
    dpre: &[S],
    grad_w: &mut [S],
    grad_x: Option<&mut Vec<S>>,
) {
    let (h, wd) = (block.height, block.width);
    let k = CONV_KERNEL;
    let pad = CONV_PADDING as isize;
    let mut gx = grad_x;
    for o in 0..block.out_channels {
        for y in 0..h {
            for xx in 0..wd {
                let d = dpre[(o * h + y) * wd + xx];
                if d.is_zero() {
                    continue;
                }
                grad_w[block.bias + o] += d;
                for c in 0..block.in_channels {
                    let kbase = block.weight + ((o * block.in_channels + c) * k) * k;
                    for ky in 0..k {
                        let iy = y as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = xx as isize + kx as isize - pad;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let xi = (c * h + iy as usize) * wd + ix as usize;
                            grad_w[kbase + ky * k + kx] += d * x[xi];
                            if let Some(g) = gx.as_deref_mut() {
                                g[xi] += w[kbase + ky * k + kx] * d;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn forward_trace<S: Scalar>(model: &TargetModel, w: &[S], input: NetInput<'_, S>) -> Result<Trace<S>> {
    if w.len() != model.num_params() {
        return Err(Error::Shape(format!(
            "expected {} parameters, got {}",
            model.num_params(),
            w.len()
        )));
    }
    let mut conv_pre = Vec::new();
    let features: Vec<Vec<S>> = match (model.kind(), input) {
        (ModelKind::MlpClassifier, NetInput::Pixels(px)) => {
            check_len(px.len(), model.spec().input.len(), "pixels")?;
            vec![px.to_vec()]
        }
        (ModelKind::ConvLiteClassifier, NetInput::Pixels(px)) => {
            check_len(px.len(), model.spec().input.len(), "pixels")?;
            let block = model.conv.as_ref().expect("conv block");
            conv_pre = conv_forward(block, w, px);
            vec![conv_pre.iter().map(|&v| relu(v)).collect()]
        }
        (ModelKind::EmbedClassifier, NetInput::Embedded(emb)) => {
            let (len, dim) = (model.seq_len().unwrap_or(0), model.embedding_dim());
            check_len(emb.len(), len * dim, "embedded tokens")?;
            let inv = 1.0 / len as f64;
            let mut pooled = vec![S::zero(); dim];
            for t in 0..len {
                for k in 0..dim {
                    pooled[k] += emb[t * dim + k];
                }
            }
            vec![pooled.into_iter().map(|v| v.scale(inv)).collect()]
        }
        (ModelKind::EmbedLm, NetInput::Embedded(emb)) => {
            let (len, dim) = (model.seq_len().unwrap_or(0), model.embedding_dim());
            check_len(emb.len(), len * dim, "embedded tokens")?;
            (0..len)
                .map(|j| {
                    let mut window = vec![S::zero(); len * dim];
                    window[..j * dim].copy_from_slice(&emb[..j * dim]);
                    window
                })
                .collect()
        }
        _ => return Err(Error::Shape("input modality does not match model".into())),
    };
    let last = model.dense.len() - 1;
    let rows = features
        .into_iter()
        .map(|f| {
            let mut acts = Vec::with_capacity(model.dense.len() + 1);
            acts.push(f);
            for (l, block) in model.dense.iter().enumerate() {
                let next = dense_forward(block, w, acts.last().expect("non-empty"), l != last);
                acts.push(next);
            }
            acts
        })
        .collect();
    Ok(Trace { conv_pre, rows })
}

fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("expected {want} {what}, got {got}")));
    }
    Ok(())
}

/// Logits of one forward pass, rows concatenated.
pub(crate) fn logits<S: Scalar>(model: &TargetModel, w: &[S], input: NetInput<'_, S>) -> Result<Vec<S>> {
    let trace = forward_trace(model, w, input)?;
    Ok(trace
        .rows
        .into_iter()
        .flat_map(|mut acts| acts.pop().expect("logits"))
        .collect())
}

/// Softmax cross-entropy of one row against a hard or soft target.
/// Returns the loss, d loss / d logits and, for soft targets, d loss / d target.
pub(crate) fn softmax_ce<S: Scalar>(logits: &[S], hard: Option<usize>, soft: Option<&[S]>) -> (S, Vec<S>, Vec<S>) {
    let max = logits.iter().map(|v| v.re()).fold(f64::NEG_INFINITY, f64::max);
    let shift = S::from_f64(max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - shift).exp()).collect();
    let mut sum = S::zero();
    for &e in &exps {
        sum += e;
    }
    let log_sum = sum.ln();
    let probs: Vec<S> = exps.iter().map(|&e| e / sum).collect();
    match (hard, soft) {
        (Some(t), _) => {
            let loss = log_sum - (logits[t] - shift);
            let mut d = probs;
            d[t] -= S::from_f64(1.0);
            (loss, d, Vec::new())
        }
        (None, Some(q)) => {
            let mut loss = S::zero();
            let mut mass = S::zero();
            let mut dq = Vec::with_capacity(q.len());
            for (c, &qc) in q.iter().enumerate() {
                let logp = logits[c] - shift - log_sum;
                loss -= qc * logp;
                mass += qc;
                dq.push(-logp);
            }
            let d = probs.iter().zip(q).map(|(&p, &qc)| p * mass - qc).collect();
            (loss, d, dq)
        }
        (None, None) => unreachable!("target required"),
    }
}

pub(crate) fn backprop<S: Scalar>(
    model: &TargetModel,
    w: &[S],
    input: NetInput<'_, S>,
    target: NetTarget<'_, S>,
    want_input: bool,
) -> Result<Backprop<S>> {
    let trace = forward_trace(model, w, input)?;
    let classes = model.num_classes();
    let n_rows = trace.rows.len();
    match target {
        NetTarget::Class(c) if c >= classes => {
            return Err(Error::Shape(format!("label {c} outside {classes} classes")));
        }
        NetTarget::Tokens(t) if t.len() != n_rows || t.iter().any(|&v| v as usize >= classes) => {
            return Err(Error::Shape("token targets do not match sequence".into()));
        }
        NetTarget::Soft(q) if q.len() != n_rows * classes => {
            return Err(Error::Shape(format!(
                "soft targets: expected {} entries, got {}",
                n_rows * classes,
                q.len()
            )));
        }
        NetTarget::Class(_) if n_rows != 1 => {
            return Err(Error::Shape("class target for a per-position model".into()));
        }
        _ => {}
    }

    let mut loss = S::zero();
    let mut grad_w = vec![S::zero(); w.len()];
    let mut grad_target = Vec::new();
    let mut d_features = Vec::with_capacity(n_rows);
    let last = model.dense.len() - 1;
    for (r, acts) in trace.rows.iter().enumerate() {
        let z = &acts[acts.len() - 1];
        let (l, dz, dq) = match target {
            NetTarget::Class(c) => softmax_ce(z, Some(c), None),
            NetTarget::Tokens(t) => softmax_ce(z, Some(t[r] as usize), None),
            NetTarget::Soft(q) => softmax_ce(z, None, Some(&q[r * classes..(r + 1) * classes])),
        };
        loss += l;
        grad_target.extend(dq);
        let mut d = dz;
        for l in (0..=last).rev() {
            let block = &model.dense[l];
            let x = &acts[l];
            let mut dx = dense_backward(block, w, x, &d, &mut grad_w);
            if l > 0 {
                for (g, a) in dx.iter_mut().zip(x) {
                    if a.re() <= 0.0 {
                        *g = S::zero();
                    }
                }
            }
            d = dx;
        }
        d_features.push(d);
    }

    let mut grad_input = Vec::new();
    match (model.kind(), input) {
        (ModelKind::MlpClassifier, _) => {
            if want_input {
                grad_input = d_features.pop().expect("one row");
            }
        }
        (ModelKind::ConvLiteClassifier, NetInput::Pixels(px)) => {
            let block = model.conv.as_ref().expect("conv block");
            let mut dpre = d_features.pop().expect("one row");
            for (g, p) in dpre.iter_mut().zip(&trace.conv_pre) {
                if p.re() <= 0.0 {
                    *g = S::zero();
                }
            }
            if want_input {
                grad_input = vec![S::zero(); px.len()];
                conv_backward(block, w, px, &dpre, &mut grad_w, Some(&mut grad_input));
            } else {
                conv_backward(block, w, px, &dpre, &mut grad_w, None);
            }
        }
        (ModelKind::EmbedClassifier, _) if want_input => {
            let (len, dim) = (model.seq_len().unwrap_or(0), model.embedding_dim());
            let d = &d_features[0];
            let inv = 1.0 / len as f64;
            grad_input = (0..len * dim).map(|i| d[i % dim].scale(inv)).collect();
        }
        (ModelKind::EmbedLm, _) if want_input => {
            let (len, dim) = (model.seq_len().unwrap_or(0), model.embedding_dim());
            grad_input = vec![S::zero(); len * dim];
            for (j, d) in d_features.iter().enumerate() {
                for (g, &v) in grad_input[..j * dim].iter_mut().zip(&d[..j * dim]) {
                    *g += v;
                }
            }
        }
        _ => {}
    }

    Ok(Backprop {
        loss,
        grad_w,
        grad_input,
        grad_target,
    })
}
