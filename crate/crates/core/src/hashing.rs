//! Feature hashing of gradients.
//!
//! Every source coordinate `i ∈ [m]` is assigned a bin `r(i) ∈ [k]` uniformly
//! at random; the projection sums the coordinates sharing a bin. This is
//! left-multiplication by the 0/1 matrix `P` with `P[r(i), i] = 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashProjection {
    m: usize,
    k: usize,
    seed: u64,
    #[serde(skip)]
    bins: Vec<u32>,
}

impl HashProjection {
    pub fn new(m: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::InvalidArgument(format!(
                "hash target dimension must satisfy 1 <= k <= m, got k={k}, m={m}"
            )));
        }
        if k > u32::MAX as usize {
            return Err(Error::InvalidArgument("hash target dimension too large".into()));
        }
        let mut rng = rng::stream(seed);
        let bins = (0..m).map(|_| rng.random_range(0..k as u32)).collect();
        Ok(HashProjection { m, k, seed, bins })
    }

    /// Rebuilds the bin table after deserialization.
    pub fn rebuild(&self) -> Result<Self> {
        HashProjection::new(self.m, self.k, self.seed)
    }

    pub fn source_dim(&self) -> usize {
        self.m
    }

    pub fn target_dim(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Bin assignment `r`.
    pub fn bins(&self) -> &[u32] {
        &self.bins
    }

    pub fn project(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.m {
            return Err(Error::Shape(format!(
                "hash projection expects length {}, got {}",
                self.m,
                g.len()
            )));
        }
        let mut out = vec![0.0; self.k];
        for (&v, &bin) in g.iter().zip(&self.bins) {
            out[bin as usize] += v;
        }
        Ok(out)
    }
}

pub fn build_projection(m: usize, k: usize, seed: u64) -> Result<HashProjection> {
    HashProjection::new(m, k, seed)
}

/// Target dimension for a hash ratio `k / m`, at least 1.
pub fn hashed_dim(m: usize, ratio: f64) -> usize {
    ((m as f64 * ratio).round() as usize).clamp(1, m)
}
