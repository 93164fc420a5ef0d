//! The honest-but-curious server's view of one federated step.
//!
//! Each client computes its per-sample gradient, applies the defense
//! mechanism locally, and the server receives the sum over the batch.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{loss_and_grad, Example, GradientVector, TargetModel};
use crate::rng;

/// Defense mechanism applied to every per-sample gradient before aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mechanism")]
pub enum Defense {
    None,
    /// Element-wise sign, with `sign(0) = 0`.
    Sign,
    /// Keep the `ceil((1 - alpha) m)` largest-magnitude coordinates.
    Prune { alpha: f64 },
    /// Add `N(0, sigma² I)`.
    Gauss { sigma: f64 },
}

impl Defense {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Defense::Prune { alpha } if !(0.0..1.0).contains(&alpha) => Err(Error::InvalidArgument(format!(
                "prune alpha must lie in [0, 1), got {alpha}"
            ))),
            Defense::Gauss { sigma } if !(sigma >= 0.0) || !sigma.is_finite() => Err(Error::InvalidArgument(
                format!("gauss sigma must be non-negative, got {sigma}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, Defense::Gauss { sigma } if *sigma > 0.0)
    }

    /// Short name used in manifests and reports.
    pub fn name(&self) -> &'static str {
        match self {
            Defense::None => "none",
            Defense::Sign => "sign",
            Defense::Prune { .. } => "prune",
            Defense::Gauss { .. } => "gauss",
        }
    }
}

impl fmt::Display for Defense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defense::None | Defense::Sign => f.write_str(self.name()),
            Defense::Prune { alpha } => write!(f, "prune(alpha={alpha})"),
            Defense::Gauss { sigma } => write!(f, "gauss(sigma={sigma})"),
        }
    }
}

/// A defense together with the seed its Gaussian noise streams derive from.
///
/// Sample `id` visited at `epoch` draws its noise from
/// `rng::noise_seed(noise_seed, id, epoch)`, so repeated visits get fresh
/// noise and the result never depends on evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub defense: Defense,
    pub noise_seed: u64,
}

impl DefenseConfig {
    pub fn new(defense: Defense, noise_seed: u64) -> Self {
        DefenseConfig { defense, noise_seed }
    }

    pub fn none() -> Self {
        DefenseConfig::new(Defense::None, 0)
    }

    /// Applies the defense to one sample's gradient during visit `epoch`.
    pub fn apply(&self, g: GradientVector, sample: u64, epoch: u64) -> GradientVector {
        match self.defense {
            Defense::None => g,
            Defense::Sign => apply_sign(&g),
            Defense::Prune { alpha } => apply_prune(&g, alpha),
            Defense::Gauss { sigma } => {
                let mut noise = rng::stream(rng::noise_seed(self.noise_seed, sample, epoch));
                apply_gauss(g, sigma, &mut noise)
            }
        }
    }
}

pub fn apply_sign(g: &[f64]) -> GradientVector {
    g.iter()
        .map(|&v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect::<Vec<_>>()
        .into()
}

/// Number of coordinates pruning keeps: `ceil((1 - alpha) m)`.
///
/// The product is rounded to 9 decimals first so that e.g. `0.01 * 100`
/// evaluating to `1.0000000000000009` still keeps exactly one coordinate.
pub fn prune_keep_count(m: usize, alpha: f64) -> usize {
    let raw = (1.0 - alpha) * m as f64;
    let rounded = (raw * 1e9).round() / 1e9;
    (rounded.ceil() as usize).min(m)
}

/// Zeroes all but the largest-magnitude coordinates; ties go to the lower index.
pub fn apply_prune(g: &[f64], alpha: f64) -> GradientVector {
    let keep = prune_keep_count(g.len(), alpha);
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()).then(a.cmp(&b)));
    let mut out = vec![0.0; g.len()];
    for &i in &order[..keep] {
        out[i] = g[i];
    }
    out.into()
}

pub fn apply_gauss<R: Rng + ?Sized>(g: GradientVector, sigma: f64, rng: &mut R) -> GradientVector {
    if sigma == 0.0 {
        return g;
    }
    let mut g = g;
    for v in g.iter_mut() {
        *v += sigma * rng.sample::<f64, _>(StandardNormal);
    }
    g
}

/// Examples held by the clients of one aggregation round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientBatch {
    pub examples: Vec<Example>,
}

impl ClientBatch {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidArgument("client batch must be non-empty".into()));
        }
        let first = examples[0].input.len();
        if examples.iter().any(|e| e.input.len() != first) {
            return Err(Error::Shape("batch examples differ in shape".into()));
        }
        Ok(ClientBatch { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// `Σ_i DM[∇_w ℓ(f_w(x_i), y_i)]` as received by the server.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedGradient {
    pub values: GradientVector,
    pub batch_size: usize,
    pub defense: DefenseConfig,
}

/// Per-sample gradients, defended per sample, then summed in batch order.
pub fn server_observe(
    model: &TargetModel,
    w: &[f64],
    batch: &ClientBatch,
    defense: &DefenseConfig,
    epoch: u64,
) -> Result<AggregatedGradient> {
    defense.defense.validate()?;
    let defended: Vec<GradientVector> = batch
        .examples
        .par_iter()
        .map(|ex| loss_and_grad(model, w, ex).map(|(_, g)| defense.apply(g, ex.id, epoch)))
        .collect::<Result<_>>()?;
    Ok(AggregatedGradient {
        values: sum_gradients(model.num_params(), &defended),
        batch_size: batch.len(),
        defense: *defense,
    })
}

pub(crate) fn sum_gradients<G: AsRef<[f64]>>(m: usize, grads: &[G]) -> GradientVector {
    let mut total = GradientVector::zeros(m);
    for g in grads {
        total.add_assign(g.as_ref());
    }
    total
}

impl AsRef<[f64]> for GradientVector {
    fn as_ref(&self) -> &[f64] {
        self
    }
}
