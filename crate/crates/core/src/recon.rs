//! Reconstructed (or ground-truth) batches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::TargetRef;
use crate::model::{Example, Input};

/// One batch of samples in the attacker's output space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reconstruction {
    /// Flattened CHW images in `[0, 1]`.
    Images(Vec<Vec<f64>>),
    /// Token-id sequences.
    Tokens(Vec<Vec<u32>>),
}

impl Reconstruction {
    /// Ground truth of a batch; mixed modalities are rejected.
    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        match examples.first().map(|e| &e.input) {
            None => Err(Error::InvalidArgument("empty batch".into())),
            Some(Input::Pixels(_)) => examples
                .iter()
                .map(|e| e.input.pixels().map(<[f64]>::to_vec))
                .collect::<Option<Vec<_>>>()
                .map(Reconstruction::Images)
                .ok_or_else(|| Error::Shape("mixed modalities in batch".into())),
            Some(Input::Tokens(_)) => examples
                .iter()
                .map(|e| e.input.tokens().map(<[u32]>::to_vec))
                .collect::<Option<Vec<_>>>()
                .map(Reconstruction::Tokens)
                .ok_or_else(|| Error::Shape("mixed modalities in batch".into())),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Reconstruction::Images(v) => v.len(),
            Reconstruction::Tokens(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn targets(&self) -> Vec<TargetRef<'_>> {
        match self {
            Reconstruction::Images(v) => v.iter().map(|x| TargetRef::Pixels(x)).collect(),
            Reconstruction::Tokens(v) => v.iter().map(|x| TargetRef::Tokens(x)).collect(),
        }
    }

    /// Reorders samples so that entry `i` becomes entry `perm[i]` of the input.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        match self {
            Reconstruction::Images(v) => Reconstruction::Images(perm.iter().map(|&j| v[j].clone()).collect()),
            Reconstruction::Tokens(v) => Reconstruction::Tokens(perm.iter().map(|&j| v[j].clone()).collect()),
        }
    }
}
