//! Gradient-matching attacks: Adam on dummy data, several restarts.

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::objective::{match_loss_and_grad, DummySample, DummyTarget, MatchObjective};
use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::federated::AggregatedGradient;
use crate::model::{ModelKind, TargetModel};
use crate::recon::Reconstruction;
use crate::rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DummyInit {
    /// Pixels `U(0, 1)`; embeddings drawn like the embedding table.
    #[default]
    RandomUniform,
    Zeros,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// The attacker is handed the true labels.
    #[default]
    Known,
    /// Labels are relaxed to softmax probabilities and optimized jointly.
    OptimizedSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptAttackConfig {
    pub steps: usize,
    pub lr: f64,
    pub restarts: usize,
    pub init: DummyInit,
    pub label_mode: LabelMode,
    pub seed: u64,
    /// Multiply the step size by 0.1 after 3/8, 5/8 and 7/8 of the steps.
    pub lr_decay: bool,
    pub adam: AdamConfig,
}

impl Default for OptAttackConfig {
    fn default() -> Self {
        OptAttackConfig {
            steps: 2000,
            lr: 0.01,
            restarts: 1,
            init: DummyInit::RandomUniform,
            label_mode: LabelMode::Known,
            seed: 0,
            lr_decay: true,
            adam: AdamConfig::default(),
        }
    }
}

impl OptAttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config("lr", "must be a positive finite number"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if !self.lr_decay {
            return self.lr;
        }
        let drops = [3, 5, 7].iter().filter(|&&k| step * 8 >= k * self.steps).count();
        self.lr * 0.1f64.powi(drops as i32)
    }
}

/// Result of the best restart.
#[derive(Clone, Debug, PartialEq)]
pub struct OptOutcome {
    pub reconstruction: Reconstruction,
    pub final_loss: f64,
    pub restart: usize,
}

/// Per-restart optimization variables.
struct Dummies {
    /// Pixels or embeddings, one vector per sample.
    inputs: Vec<Vec<f64>>,
    /// Label logits per sample, rows × classes; empty for known labels.
    label_logits: Vec<Vec<f64>>,
    known: Vec<usize>,
}

fn softmax_rows(z: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(z.len());
    for row in z.chunks(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Chains `d/dq` through `q = softmax(z)` row by row.
fn softmax_backward(q: &[f64], dq: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(q.len());
    for (qr, dr) in q.chunks(classes).zip(dq.chunks(classes)) {
        let dot: f64 = qr.iter().zip(dr).map(|(a, b)| a * b).sum();
        out.extend(qr.iter().zip(dr).map(|(p, d)| p * (d - dot)));
    }
    out
}

impl Dummies {
    fn samples(&self, classes: usize) -> Vec<DummySample> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(b, x)| DummySample {
                input: x.clone(),
                target: if self.label_logits.is_empty() {
                    DummyTarget::Class(self.known[b])
                } else {
                    DummyTarget::Soft(softmax_rows(&self.label_logits[b], classes))
                },
            })
            .collect()
    }
}

struct Problem<'a> {
    model: &'a TargetModel,
    w: &'a [f64],
    observed: &'a AggregatedGradient,
    objective: MatchObjective,
    cfg: &'a OptAttackConfig,
    /// Clip inputs to `[0, 1]` after every step.
    clip: bool,
    classes: usize,
}

impl Problem<'_> {
    /// Adam over all dummy variables; returns the final dummies and loss.
    fn run(&self, mut d: Dummies) -> Result<(Dummies, f64)> {
        let n_in: usize = d.inputs.iter().map(Vec::len).sum();
        let n_lab: usize = d.label_logits.iter().map(Vec::len).sum();
        let mut adam = AdamState::new(n_in + n_lab, self.cfg.adam);
        let mut flat = Vec::with_capacity(n_in + n_lab);
        let mut loss = f64::NAN;
        for step in 0..=self.cfg.steps {
            let samples = d.samples(self.classes);
            let (l, grads) = match_loss_and_grad(self.model, self.w, &samples, self.observed, &self.objective)?;
            if !l.is_finite() {
                return Err(Error::NonFinite(format!("match loss at step {step}")));
            }
            loss = l;
            if step == self.cfg.steps {
                break;
            }
            let mut grad = Vec::with_capacity(n_in + n_lab);
            grads.iter().for_each(|g| grad.extend_from_slice(&g.input));
            for (g, s) in grads.iter().zip(&samples) {
                if let (Some(dq), DummyTarget::Soft(q)) = (&g.target, &s.target) {
                    grad.extend(softmax_backward(q, dq, self.classes));
                }
            }
            flat.clear();
            d.inputs.iter().chain(&d.label_logits).for_each(|v| flat.extend_from_slice(v));
            adam.step(&mut flat, &grad, self.cfg.lr_at(step))?;
            let mut it = flat.iter().copied();
            for v in d.inputs.iter_mut().chain(d.label_logits.iter_mut()) {
                v.iter_mut().for_each(|x| *x = it.next().expect("flat length"));
            }
            if self.clip {
                d.inputs.iter_mut().flatten().for_each(|x| *x = x.clamp(0.0, 1.0));
            }
        }
        Ok((d, loss))
    }

    /// Runs every restart and keeps the lowest final loss (earliest on ties).
    fn best<F>(&self, init: F) -> Result<(Dummies, f64, usize)>
    where
        F: Fn(&mut rng::Stream) -> Dummies + Sync,
    {
        let runs: Vec<Option<(Dummies, f64)>> = (0..self.cfg.restarts)
            .into_par_iter()
            .map(|r| {
                let mut stream = rng::labeled_stream(self.cfg.seed, &format!("restart:{r}"));
                match self.run(init(&mut stream)) {
                    Ok(v) => Some(v),
                    Err(e) => {
                        warn!("restart {r} aborted: {e}");
                        None
                    }
                }
            })
            .collect();
        let mut best: Option<(Dummies, f64, usize)> = None;
        for (r, run) in runs.into_iter().enumerate() {
            if let Some((d, l)) = run {
                if best.as_ref().is_none_or(|b| l < b.1) {
                    best = Some((d, l, r));
                }
            }
        }
        best.ok_or_else(|| Error::NonFinite("every restart of the attack diverged".into()))
    }
}

fn check_common(
    model: &TargetModel,
    observed: &AggregatedGradient,
    objective: &MatchObjective,
    cfg: &OptAttackConfig,
    known_labels: Option<&[usize]>,
) -> Result<()> {
    cfg.validate()?;
    objective.check(&observed.defense.defense, observed.batch_size)?;
    if cfg.label_mode == LabelMode::Known {
        match known_labels {
            Some(l) if l.len() == observed.batch_size => {
                if let Some(&c) = l.iter().find(|&&c| c >= model.num_classes()) {
                    return Err(Error::Shape(format!("label {c} outside {} classes", model.num_classes())));
                }
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "known-label attack needs {} labels",
                    observed.batch_size
                )))
            }
        }
    }
    Ok(())
}

fn random_logits(stream: &mut rng::Stream, n: usize) -> Vec<f64> {
    (0..n).map(|_| 0.1 * stream.sample::<f64, _>(StandardNormal)).collect()
}

/// Reconstructs the images of an observed aggregate by gradient matching.
pub fn run_opt_attack(
    model: &TargetModel,
    w: &[f64],
    observed: &AggregatedGradient,
    objective: &MatchObjective,
    cfg: &OptAttackConfig,
    known_labels: Option<&[usize]>,
) -> Result<OptOutcome> {
    if model.kind().is_text() {
        return Err(Error::InvalidArgument("use the text attack for token models".into()));
    }
    check_common(model, observed, objective, cfg, known_labels)?;
    let d = model.spec().input.len();
    let b = observed.batch_size;
    let classes = model.num_classes();
    let problem = Problem {
        model,
        w,
        observed,
        objective: *objective,
        cfg,
        clip: true,
        classes,
    };
    let (best, final_loss, restart) = problem.best(|s| Dummies {
        inputs: (0..b)
            .map(|_| match cfg.init {
                DummyInit::RandomUniform => (0..d).map(|_| s.random::<f64>()).collect(),
                DummyInit::Zeros => vec![0.0; d],
            })
            .collect(),
        label_logits: match cfg.label_mode {
            LabelMode::Known => Vec::new(),
            LabelMode::OptimizedSoftmax => (0..b).map(|_| random_logits(s, classes)).collect(),
        },
        known: known_labels.map(<[usize]>::to_vec).unwrap_or_default(),
    })?;
    Ok(OptOutcome {
        reconstruction: Reconstruction::Images(best.inputs),
        final_loss,
        restart,
    })
}

/// Nearest embedding-table row by Euclidean distance, lowest id on ties.
pub fn nearest_token(table: &[f64], dim: usize, v: &[f64]) -> u32 {
    let mut best = (f64::INFINITY, 0u32);
    for (id, row) in table.chunks(dim).enumerate() {
        let d: f64 = row.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, id as u32);
        }
    }
    best.1
}

/// Reconstructs token sequences by optimizing continuous embeddings and
/// mapping each position to its closest vocabulary entry.
///
/// Language-model targets are the sequence itself, so they are always
/// relaxed; the last token is never an input and is read off its relaxed
/// target instead.
pub fn run_text_opt_attack(
    model: &TargetModel,
    w: &[f64],
    observed: &AggregatedGradient,
    objective: &MatchObjective,
    cfg: &OptAttackConfig,
    known_labels: Option<&[usize]>,
) -> Result<OptOutcome> {
    let (Some(len), Some(vocab), Some(table)) = (model.seq_len(), model.vocab(), model.embedding_table()) else {
        return Err(Error::InvalidArgument("text attack needs a token model".into()));
    };
    let lm = model.kind() == ModelKind::EmbedLm;
    let mut cfg = cfg.clone();
    if lm {
        cfg.label_mode = LabelMode::OptimizedSoftmax;
    }
    check_common(model, observed, objective, &cfg, known_labels)?;
    let dim = model.embedding_dim();
    let b = observed.batch_size;
    let classes = model.num_classes();
    let rows = if lm { len } else { 1 };
    let spread = (table.iter().map(|v| v * v).sum::<f64>() / table.len() as f64).sqrt();
    let problem = Problem {
        model,
        w,
        observed,
        objective: *objective,
        cfg: &cfg,
        clip: false,
        classes,
    };
    let (best, final_loss, restart) = problem.best(|s| Dummies {
        inputs: (0..b)
            .map(|_| match cfg.init {
                DummyInit::RandomUniform => (0..len * dim)
                    .map(|_| spread * s.sample::<f64, _>(StandardNormal))
                    .collect(),
                DummyInit::Zeros => vec![0.0; len * dim],
            })
            .collect(),
        label_logits: match cfg.label_mode {
            LabelMode::Known => Vec::new(),
            LabelMode::OptimizedSoftmax => (0..b).map(|_| random_logits(s, rows * classes)).collect(),
        },
        known: known_labels.map(<[usize]>::to_vec).unwrap_or_default(),
    })?;
    let seqs = best
        .inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut toks: Vec<u32> = x.chunks(dim).map(|e| nearest_token(table, dim, e)).collect();
            if lm {
                let last = &best.label_logits[i][(len - 1) * vocab..len * vocab];
                toks[len - 1] = argmax(last);
            }
            toks
        })
        .collect();
    Ok(OptOutcome {
        reconstruction: Reconstruction::Tokens(seqs),
        final_loss,
        restart,
    })
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}
