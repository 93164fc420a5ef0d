//! Training the inverter on gradients of auxiliary data.

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_distr::StandardNormal;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::inverter::{backward, forward, InverterSpec, Layer, OutputHead};
use super::perm::{best_assignment, SingleLoss};
use crate::adam::{AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::federated::{server_observe, AggregatedGradient, ClientBatch, Defense, DefenseConfig};
use crate::hashing::HashProjection;
use crate::model::{fingerprint, loss_and_grad, Example, ModelKind, TargetModel};
use crate::recon::Reconstruction;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Observed gradients per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Epoch from which `lr * lr_drop_factor` is used.
    pub lr_drop_epoch: Option<usize>,
    pub lr_drop_factor: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Share of the auxiliary data withheld for validation.
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            lr_drop_epoch: None,
            lr_drop_factor: 0.1,
            adam: AdamConfig::default(),
            seed: 0,
            holdout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr", "must be a positive finite number");
        }
        if !(self.lr_drop_factor > 0.0) || !self.lr_drop_factor.is_finite() {
            return bad("lr_drop_factor", "must be a positive finite number");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_drop_epoch {
            Some(e) if epoch >= e => self.lr * self.lr_drop_factor,
            _ => self.lr,
        }
    }
}

/// What the inverter was trained against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub defense: Defense,
    pub noise_seed: u64,
    pub model_fingerprint: String,
    pub seed: u64,
    pub epochs: usize,
    pub aux_size: usize,
    pub holdout_loss: Option<f64>,
}

/// Standardized inputs are clamped to `±INPUT_CLAMP`. Pruned gradients have
/// coordinates that are almost always zero; one rare large value would
/// otherwise dominate the first layer.
pub const INPUT_CLAMP: f64 = 8.0;

/// Per-coordinate standardization fitted on the training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl InputScaling {
    fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mut mean = vec![0.0; d];
        for r in rows {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let typical = var.iter().map(|v| v.sqrt()).sum::<f64>() / d as f64;
        let floor = 0.1 * typical + 1e-12;
        let inv_std = var.iter().map(|v| 1.0 / v.sqrt().max(floor)).collect();
        InputScaling { mean, inv_std }
    }

    fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.inv_std) {
            *v = ((*v - m) * s).clamp(-INPUT_CLAMP, INPUT_CLAMP);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedInverter {
    pub spec: InverterSpec,
    pub theta: Vec<f64>,
    pub hash: Option<HashProjection>,
    pub scaling: InputScaling,
    pub manifest: TrainingManifest,
}

/// Loss curve of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean per-sample training loss of every epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-sample loss on the held-out slice after every epoch.
    pub holdout_losses: Vec<f64>,
    pub holdout_size: usize,
}

fn single_loss(head: &OutputHead) -> SingleLoss {
    match *head {
        OutputHead::Continuous { .. } => SingleLoss::Mse,
        OutputHead::Tokens { seq_len, vocab, .. } => SingleLoss::TokenCe { seq_len, vocab },
    }
}

/// Checks that the inverter head fits the target model's inputs.
pub fn check_head(model: &TargetModel, spec: &InverterSpec, hash: Option<&HashProjection>) -> Result<()> {
    spec.validate()?;
    let expected_in = match hash {
        Some(h) if h.source_dim() != model.num_params() => {
            return Err(Error::Shape(format!(
                "hash expects {} gradient coordinates, model has {}",
                h.source_dim(),
                model.num_params()
            )))
        }
        Some(h) => h.target_dim(),
        None => model.num_params(),
    };
    if spec.input_dim != expected_in {
        return Err(Error::Shape(format!(
            "inverter input dimension {} but observations have {expected_in}",
            spec.input_dim
        )));
    }
    let ok = match (spec.head, model.kind()) {
        (OutputHead::Continuous { dim, .. }, ModelKind::MlpClassifier | ModelKind::ConvLiteClassifier) => {
            dim == model.spec().input.len()
        }
        (OutputHead::Tokens { seq_len, vocab, .. }, ModelKind::EmbedClassifier | ModelKind::EmbedLm) => {
            Some(seq_len) == model.seq_len() && Some(vocab) == model.vocab()
        }
        _ => false,
    };
    if !ok {
        return Err(Error::Shape("inverter head does not match the target model's task".into()));
    }
    Ok(())
}

/// One training pair: the (hashed) defended aggregate and the batch it came from.
pub fn make_training_example(
    batch: &ClientBatch,
    model: &TargetModel,
    w: &[f64],
    defense: &DefenseConfig,
    hash: Option<&HashProjection>,
    epoch: u64,
    inverter_batch: usize,
) -> Result<(Vec<f64>, Reconstruction)> {
    if batch.len() != inverter_batch {
        return Err(Error::Shape(format!(
            "client batch has {} samples, inverter expects {inverter_batch}",
            batch.len()
        )));
    }
    let observed = server_observe(model, w, batch, defense, epoch)?;
    let input = match hash {
        Some(h) => h.project(&observed.values)?,
        None => observed.values.into_inner(),
    };
    Ok((input, Reconstruction::from_examples(&batch.examples)?))
}

/// Per-sample gradients computed once; only Gaussian noise varies by visit.
struct GradientCache<'a> {
    rows: Vec<Vec<f64>>,
    ids: Vec<u64>,
    defense: DefenseConfig,
    hash: Option<&'a HashProjection>,
    m: usize,
}

impl<'a> GradientCache<'a> {
    fn build(
        aux: &[Example],
        model: &TargetModel,
        w: &[f64],
        defense: &DefenseConfig,
        hash: Option<&'a HashProjection>,
    ) -> Result<Self> {
        let stochastic = defense.defense.is_stochastic();
        let rows = aux
            .par_iter()
            .map(|ex| {
                let (_, g) = loss_and_grad(model, w, ex)?;
                // Deterministic defenses commute with caching; the projection
                // is linear, so noise can be hashed separately later.
                let g = if stochastic { g } else { defense.apply(g, ex.id, 0) };
                match hash {
                    Some(h) => h.project(&g),
                    None => Ok(g.into_inner()),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientCache {
            rows,
            ids: aux.iter().map(|e| e.id).collect(),
            defense: *defense,
            hash,
            m: model.num_params(),
        })
    }

    /// Observation for the batch of cached samples `idx` during visit `epoch`.
    fn observe(&self, idx: &[usize], epoch: u64) -> Result<Vec<f64>> {
        let mut total = vec![0.0; self.rows[0].len()];
        for &i in idx {
            match self.defense.defense {
                Defense::Gauss { sigma } if sigma > 0.0 => {
                    let mut stream = rng::stream(rng::noise_seed(self.defense.noise_seed, self.ids[i], epoch));
                    let noise: Vec<f64> = (0..self.m)
                        .map(|_| sigma * stream.sample::<f64, _>(StandardNormal))
                        .collect();
                    match self.hash {
                        Some(h) => {
                            let z = h.project(&noise)?;
                            for ((t, g), z) in total.iter_mut().zip(&self.rows[i]).zip(&z) {
                                *t += g + z;
                            }
                        }
                        None => {
                            for ((t, g), z) in total.iter_mut().zip(&self.rows[i]).zip(&noise) {
                                *t += g + z;
                            }
                        }
                    }
                }
                _ => total.iter_mut().zip(&self.rows[i]).for_each(|(t, g)| *t += g),
            }
        }
        Ok(total)
    }
}

/// Loss of a mini-batch of observations and, optionally, d loss / d theta.
struct Objective<'a> {
    layers: Vec<Layer>,
    head: OutputHead,
    single: SingleLoss,
    scaling: &'a InputScaling,
}

impl Objective<'_> {
    fn matrix(&self, inputs: Vec<Vec<f64>>) -> Array2<f64> {
        let (n, d) = (inputs.len(), inputs[0].len());
        let mut flat = Vec::with_capacity(n * d);
        for mut row in inputs {
            self.scaling.apply(&mut row);
            flat.extend_from_slice(&row);
        }
        Array2::from_shape_vec((n, d), flat).expect("rectangular inputs")
    }

    /// Returns the mean per-sample loss and the gradient of that mean.
    fn eval(&self, theta: &[f64], inputs: Vec<Vec<f64>>, targets: &[Reconstruction], grad: bool) -> Result<(f64, Vec<f64>)> {
        let trace = forward(&self.layers, theta, self.matrix(inputs));
        let out = trace.output();
        let b = self.head.batch();
        let per = self.head.per_sample();
        let scale = 1.0 / (b * targets.len()) as f64;
        let mut d_out = Array2::<f64>::zeros(out.raw_dim());
        let mut total = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let row = out.row(r);
            let row = row.as_slice().expect("contiguous output");
            let tr = target.targets();
            let cost = (0..b)
                .map(|i| {
                    tr.iter()
                        .map(|&t| self.single.eval(&row[i * per..(i + 1) * per], t, None))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, perm) = best_assignment(&cost)?;
            total += loss;
            if grad {
                let mut d_row = d_out.row_mut(r);
                let d_row = d_row.as_slice_mut().expect("contiguous gradient");
                let mut g = vec![0.0; per];
                for (i, &j) in perm.iter().enumerate() {
                    self.single.eval(&row[i * per..(i + 1) * per], tr[j], Some(&mut g))?;
                    d_row[i * per..(i + 1) * per]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, g)| *d = g * scale);
                }
            }
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(Error::NonFinite("inverter training loss".into()));
        }
        let g = if grad { backward(&self.layers, theta, &trace, d_out) } else { Vec::new() };
        Ok((mean, g))
    }
}

/// Trains `g_θ` to map defended aggregates of auxiliary batches back to the batches.
pub fn train_inverter(
    aux: &[Example],
    model: &TargetModel,
    w: &[f64],
    defense: &DefenseConfig,
    spec: &InverterSpec,
    cfg: &TrainConfig,
    hash: Option<&HashProjection>,
) -> Result<(TrainedInverter, TrainingLog)> {
    cfg.validate()?;
    defense.defense.validate()?;
    check_head(model, spec, hash)?;
    if aux.is_empty() {
        return Err(Error::InvalidArgument("auxiliary dataset is empty".into()));
    }
    for ex in aux {
        model.check_example(ex)?;
    }
    let b = spec.head.batch();

    let mut order: Vec<usize> = (0..aux.len()).collect();
    order.shuffle(&mut rng::labeled_stream(cfg.seed, "holdout"));
    let n_hold = (aux.len() as f64 * cfg.holdout_fraction).floor() as usize;
    let (held, train) = order.split_at(n_hold);
    if train.len() < b {
        return Err(Error::InvalidArgument(format!(
            "{} training samples cannot fill an inverter batch of {b}",
            train.len()
        )));
    }

    let cache = GradientCache::build(aux, model, w, defense, hash)?;
    let targets_of = |idx: &[usize]| -> Result<Reconstruction> {
        Reconstruction::from_examples(&idx.iter().map(|&i| aux[i].clone()).collect::<Vec<_>>())
    };
    let observe_all = |batches: &[&[usize]], epoch: u64| -> Result<Vec<Vec<f64>>> {
        batches.par_iter().map(|idx| cache.observe(idx, epoch)).collect()
    };

    // Scaling is fitted on the first epoch's arrangement of the training data.
    let epoch_order = |epoch: usize| {
        let mut o = train.to_vec();
        o.shuffle(&mut rng::labeled_stream(cfg.seed, &format!("epoch:{epoch}")));
        o
    };
    let first = epoch_order(0);
    let first_batches: Vec<&[usize]> = first.chunks_exact(b).collect();
    let scaling = InputScaling::fit(&observe_all(&first_batches, 0)?);

    let objective = Objective {
        layers: spec.layers(),
        head: spec.head,
        single: single_loss(&spec.head),
        scaling: &scaling,
    };
    let held_batches: Vec<&[usize]> = held.chunks_exact(b).collect();
    let held_targets = held_batches.iter().map(|idx| targets_of(idx)).collect::<Result<Vec<_>>>()?;
    let holdout_loss = |theta: &[f64]| -> Result<Option<f64>> {
        if held_batches.is_empty() {
            return Ok(None);
        }
        let inputs = observe_all(&held_batches, 0)?;
        objective.eval(theta, inputs, &held_targets, false).map(|(l, _)| Some(l))
    };

    let mut theta = spec.init_theta(rng::derive_seed(cfg.seed, "inverter-init"));
    let mut adam = AdamState::new(theta.len(), cfg.adam);
    let mut log = TrainingLog {
        holdout_size: held_batches.len() * b,
        ..TrainingLog::default()
    };
    info!(
        "training inverter: {} params, {} train / {} held-out samples, defense {}",
        theta.len(),
        train.len(),
        log.holdout_size,
        defense.defense
    );
    for epoch in 0..cfg.epochs {
        let o = epoch_order(epoch);
        let batches: Vec<&[usize]> = o.chunks_exact(b).collect();
        let lr = cfg.lr_at(epoch);
        let mut sum = 0.0;
        for step in batches.chunks(cfg.batch_size) {
            let inputs = observe_all(step, epoch as u64)?;
            let targets = step.iter().map(|idx| targets_of(idx)).collect::<Result<Vec<_>>>()?;
            let (loss, grad) = objective.eval(&theta, inputs, &targets, true)?;
            adam.step(&mut theta, &grad, lr)?;
            sum += loss * step.len() as f64;
        }
        log.epoch_losses.push(sum / batches.len() as f64);
        if let Some(h) = holdout_loss(&theta)? {
            log.holdout_losses.push(h);
        }
        debug!(
            "epoch {epoch}: train {:.6} held-out {:?}",
            log.epoch_losses[epoch],
            log.holdout_losses.last()
        );
    }

    let manifest = TrainingManifest {
        defense: defense.defense,
        noise_seed: defense.noise_seed,
        model_fingerprint: fingerprint(model, w),
        seed: cfg.seed,
        epochs: cfg.epochs,
        aux_size: aux.len(),
        holdout_loss: holdout_loss(&theta)?,
    };
    Ok((
        TrainedInverter {
            spec: spec.clone(),
            theta,
            hash: hash.cloned(),
            scaling,
            manifest,
        },
        log,
    ))
}

/// Runs the inverter on one observation.
pub fn invert(inv: &TrainedInverter, observed: &AggregatedGradient) -> Result<Reconstruction> {
    if observed.defense.defense != inv.manifest.defense {
        return Err(Error::DefenseMismatch {
            trained: inv.manifest.defense.to_string(),
            observed: observed.defense.defense.to_string(),
        });
    }
    let b = inv.spec.head.batch();
    if observed.batch_size != b {
        return Err(Error::Shape(format!(
            "observation aggregates {} samples, inverter reconstructs {b}",
            observed.batch_size
        )));
    }
    let mut input = match &inv.hash {
        Some(h) => h.project(&observed.values)?,
        None => observed.values.to_vec(),
    };
    if input.len() != inv.spec.input_dim {
        return Err(Error::Shape(format!(
            "observation has {} coordinates, inverter expects {}",
            input.len(),
            inv.spec.input_dim
        )));
    }
    inv.scaling.apply(&mut input);
    let x = Array2::from_shape_vec((1, input.len()), input).expect("row vector");
    let trace = forward(&inv.spec.layers(), &inv.theta, x);
    let out = trace.output().row(0).to_vec();
    let per = inv.spec.head.per_sample();
    Ok(match inv.spec.head {
        OutputHead::Continuous { .. } => Reconstruction::Images(
            out.chunks(per)
                .map(|c| c.iter().map(|v| v.clamp(0.0, 1.0)).collect())
                .collect(),
        ),
        OutputHead::Tokens { vocab, .. } => Reconstruction::Tokens(
            out.chunks(per)
                .map(|c| c.chunks(vocab).map(argmax).collect())
                .collect(),
        ),
    })
}

/// Index of the largest logit, lowest index on ties.
fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}
