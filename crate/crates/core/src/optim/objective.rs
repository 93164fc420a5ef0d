//! Gradient-matching objectives and their exact gradients with respect to
//! the dummy data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::{AggregatedGradient, Defense};
use crate::model::net::{self, NetInput, NetTarget};
use crate::model::{Dual, TargetModel};

/// Distance between the dummy batch's gradient and the observed one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MatchObjective {
    /// `‖G − O‖²`.
    L2,
    /// `1 − cos(G, O)`.
    Cosine,
    /// `‖G − O‖² + l1_weight · ‖G − O‖₁`.
    Tag { l1_weight: f64 },
    /// `Σ h_i² + l1_weight · Σ h_i` with `h_i = max(−g_i · sign(O_i), 0)`; sign defense, B = 1.
    SignHinge { l1_weight: f64 },
    /// `1 − cos(Σ_b tanh(g_b), O)`; sign defense, B > 1.
    TanhSign,
    /// Cosine distance over the non-zero coordinates of `O`; prune defense.
    MaskedCosine,
}

impl MatchObjective {
    pub fn name(&self) -> &'static str {
        match self {
            MatchObjective::L2 => "l2",
            MatchObjective::Cosine => "cosine",
            MatchObjective::Tag { .. } => "tag",
            MatchObjective::SignHinge { .. } => "sign-hinge",
            MatchObjective::TanhSign => "tanh-sign",
            MatchObjective::MaskedCosine => "masked-cosine",
        }
    }

    /// Rejects pairings the objective was not designed for.
    pub fn check(&self, defense: &Defense, batch_size: usize) -> Result<()> {
        let incompatible = |context: String| {
            Err(Error::IncompatibleObjective {
                objective: self.name().into(),
                context,
            })
        };
        match (self, defense) {
            (MatchObjective::Tag { l1_weight } | MatchObjective::SignHinge { l1_weight }, _)
                if !(*l1_weight >= 0.0) || !l1_weight.is_finite() =>
            {
                incompatible(format!("l1 weight {l1_weight} must be non-negative"))
            }
            (MatchObjective::SignHinge { .. }, Defense::Sign) if batch_size == 1 => Ok(()),
            (MatchObjective::SignHinge { .. }, _) => incompatible(format!("{defense} defense with B={batch_size}")),
            (MatchObjective::TanhSign, Defense::Sign) if batch_size > 1 => Ok(()),
            (MatchObjective::TanhSign, _) => incompatible(format!("{defense} defense with B={batch_size}")),
            (MatchObjective::MaskedCosine, Defense::Prune { .. }) => Ok(()),
            (MatchObjective::MaskedCosine, _) => incompatible(format!("{defense} defense")),
            _ => Ok(()),
        }
    }

    /// The defense-specific adaptation used by the vision baselines.
    pub fn for_defense(defense: &Defense, batch_size: usize) -> Self {
        match defense {
            Defense::Sign if batch_size == 1 => MatchObjective::SignHinge { l1_weight: 0.0 },
            Defense::Sign => MatchObjective::TanhSign,
            Defense::Prune { .. } => MatchObjective::MaskedCosine,
            Defense::None | Defense::Gauss { .. } => MatchObjective::Cosine,
        }
    }

    /// The text baseline's adaptation of the l2 + l1 objective.
    pub fn tag_for_defense(defense: &Defense, batch_size: usize, l1_weight: f64) -> Self {
        match defense {
            Defense::Sign if batch_size == 1 => MatchObjective::SignHinge { l1_weight },
            Defense::Sign => MatchObjective::TanhSign,
            Defense::Prune { .. } => MatchObjective::MaskedCosine,
            Defense::None | Defense::Gauss { .. } => MatchObjective::Tag { l1_weight },
        }
    }
}

/// Supervision of one dummy sample.
#[derive(Clone, Debug, PartialEq)]
pub enum DummyTarget {
    /// A known class label.
    Class(usize),
    /// Row-major probability rows (one row per prediction).
    Soft(Vec<f64>),
}

/// One dummy sample: pixels for vision models, embedded tokens for text models.
#[derive(Clone, Debug, PartialEq)]
pub struct DummySample {
    pub input: Vec<f64>,
    pub target: DummyTarget,
}

/// Gradient of the match loss with respect to one dummy sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DummyGrad {
    pub input: Vec<f64>,
    /// Present for soft targets: d loss / d probabilities.
    pub target: Option<Vec<f64>>,
}

fn net_input<'a, S>(model: &TargetModel, x: &'a [S]) -> NetInput<'a, S> {
    if model.kind().is_text() {
        NetInput::Embedded(x)
    } else {
        NetInput::Pixels(x)
    }
}

fn sample_grad(model: &TargetModel, w: &[f64], d: &DummySample) -> Result<Vec<f64>> {
    let input = net_input(model, &d.input);
    let target = match &d.target {
        DummyTarget::Class(c) => NetTarget::Class(*c),
        DummyTarget::Soft(q) => NetTarget::Soft(q),
    };
    Ok(net::backprop(model, w, input, target, false)?.grad_w)
}

/// `d/d(dummy) <∇_w ℓ(w, dummy), u>` by a dual-number pass with tangent `u` on `w`.
fn directional_input_grad(model: &TargetModel, w: &[f64], u: &[f64], d: &DummySample) -> Result<DummyGrad> {
    let wd: Vec<Dual> = w.iter().zip(u).map(|(&w, &u)| Dual::new(w, u)).collect();
    let xd: Vec<Dual> = d.input.iter().map(|&v| Dual::constant(v)).collect();
    let qd: Vec<Dual>;
    let target = match &d.target {
        DummyTarget::Class(c) => NetTarget::Class(*c),
        DummyTarget::Soft(q) => {
            qd = q.iter().map(|&v| Dual::constant(v)).collect();
            NetTarget::Soft(&qd)
        }
    };
    let out = net::backprop(model, &wd, net_input(model, &xd), target, true)?;
    Ok(DummyGrad {
        input: out.grad_input.iter().map(|v| v.du).collect(),
        target: matches!(d.target, DummyTarget::Soft(_)).then(|| out.grad_target.iter().map(|v| v.du).collect()),
    })
}

/// `1 − cos(a, b)` over the coordinates selected by `mask`, and its gradient in `a`.
fn cosine_distance(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> (f64, Vec<f64>) {
    let on = |i: usize| mask.is_none_or(|m| m[i]);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in (0..a.len()).filter(|&i| on(i)) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    let (na, nb) = (aa.sqrt(), bb.sqrt());
    if na == 0.0 || nb == 0.0 {
        return (1.0, vec![0.0; a.len()]);
    }
    let cos = ab / (na * nb);
    let grad = (0..a.len())
        .map(|i| if on(i) { -(b[i] / (na * nb) - cos * a[i] / aa) } else { 0.0 })
        .collect();
    (1.0 - cos, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss of the transformed aggregate `G` against `O`, and `dL/dG`.
fn aggregate_loss(objective: &MatchObjective, g: &[f64], o: &[f64]) -> (f64, Vec<f64>) {
    match *objective {
        MatchObjective::L2 => {
            let loss = g.iter().zip(o).map(|(a, b)| (a - b) * (a - b)).sum();
            (loss, g.iter().zip(o).map(|(a, b)| 2.0 * (a - b)).collect())
        }
        MatchObjective::Tag { l1_weight } => {
            let loss = g.iter().zip(o).map(|(a, b)| (a - b) * (a - b) + l1_weight * (a - b).abs()).sum();
            let grad = g.iter().zip(o).map(|(a, b)| 2.0 * (a - b) + l1_weight * sign(a - b)).collect();
            (loss, grad)
        }
        MatchObjective::SignHinge { l1_weight } => {
            let mut loss = 0.0;
            let grad = g
                .iter()
                .zip(o)
                .map(|(&a, &b)| {
                    let s = sign(b);
                    let h = (-a * s).max(0.0);
                    loss += h * h + l1_weight * h;
                    if h > 0.0 {
                        -s * (2.0 * h + l1_weight)
                    } else {
                        0.0
                    }
                })
                .collect();
            (loss, grad)
        }
        MatchObjective::Cosine | MatchObjective::TanhSign => cosine_distance(g, o, None),
        MatchObjective::MaskedCosine => {
            let mask: Vec<bool> = o.iter().map(|&v| v != 0.0).collect();
            cosine_distance(g, o, Some(&mask))
        }
    }
}

fn check_dummies(
    model: &TargetModel,
    w: &[f64],
    dummies: &[DummySample],
    observed: &AggregatedGradient,
    objective: &MatchObjective,
) -> Result<()> {
    objective.check(&observed.defense.defense, dummies.len())?;
    if dummies.len() != observed.batch_size {
        return Err(Error::Shape(format!(
            "{} dummy samples for an aggregate of {}",
            dummies.len(),
            observed.batch_size
        )));
    }
    if w.len() != model.num_params() || observed.values.len() != model.num_params() {
        return Err(Error::Shape("weights or observation do not match the model".into()));
    }
    Ok(())
}

fn aggregate(objective: &MatchObjective, per_sample: &[Vec<f64>]) -> Vec<f64> {
    let mut total = vec![0.0; per_sample[0].len()];
    for g in per_sample {
        match objective {
            MatchObjective::TanhSign => total.iter_mut().zip(g).for_each(|(t, v)| *t += v.tanh()),
            _ => total.iter_mut().zip(g).for_each(|(t, v)| *t += v),
        }
    }
    total
}

/// Match loss of a dummy batch against an observation.
pub fn match_loss(
    model: &TargetModel,
    w: &[f64],
    dummies: &[DummySample],
    observed: &AggregatedGradient,
    objective: &MatchObjective,
) -> Result<f64> {
    check_dummies(model, w, dummies, observed, objective)?;
    let grads = dummies
        .par_iter()
        .map(|d| sample_grad(model, w, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate_loss(objective, &aggregate(objective, &grads), &observed.values).0)
}

/// Match loss and its gradient with respect to every dummy sample.
pub fn match_loss_and_grad(
    model: &TargetModel,
    w: &[f64],
    dummies: &[DummySample],
    observed: &AggregatedGradient,
    objective: &MatchObjective,
) -> Result<(f64, Vec<DummyGrad>)> {
    check_dummies(model, w, dummies, observed, objective)?;
    let grads = dummies
        .par_iter()
        .map(|d| sample_grad(model, w, d))
        .collect::<Result<Vec<_>>>()?;
    let (loss, dl_dg) = aggregate_loss(objective, &aggregate(objective, &grads), &observed.values);
    let out = dummies
        .par_iter()
        .zip(&grads)
        .map(|(d, g)| {
            let u: Vec<f64> = match objective {
                MatchObjective::TanhSign => dl_dg
                    .iter()
                    .zip(g)
                    .map(|(a, v)| {
                        let t = v.tanh();
                        a * (1.0 - t * t)
                    })
                    .collect(),
                _ => dl_dg.clone(),
            };
            directional_input_grad(model, w, &u, d)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, out))
}
