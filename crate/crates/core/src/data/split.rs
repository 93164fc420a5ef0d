use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::vision::VisionDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Fraction of auxiliary samples drawn from the target classes.
    pub beta: f64,
    pub aux_size: usize,
    pub seed: u64,
}

/// Splits classes into a target half `[0, K/2)` and an out-of-distribution
/// half `[K/2, K)`.
///
/// The auxiliary set holds `floor(beta · aux_size)` target-half samples and
/// the rest from the other half. Target-half samples not taken by the
/// auxiliary set form the target set. Both halves are shuffled with `seed`;
/// auxiliary in-distribution samples come from the tail of the shuffled
/// target half, so the head of the target set is the same for every beta.
pub fn split_beta(ds: &VisionDataset, cfg: &SplitConfig) -> Result<(VisionDataset, VisionDataset)> {
    if ds.class_count % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "beta split needs an even class count, got {}",
            ds.class_count
        )));
    }
    if !(0.0..=1.0).contains(&cfg.beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {}", cfg.beta)));
    }
    let half = ds.class_count / 2;
    let (mut first, mut second): (Vec<_>, Vec<_>) = ds
        .items
        .iter()
        .cloned()
        .partition(|e| e.label.is_some_and(|l| l < half));
    let mut rng = rng::stream(cfg.seed);
    first.shuffle(&mut rng);
    second.shuffle(&mut rng);

    let in_dist = ((cfg.beta * cfg.aux_size as f64 * 1e9).round() / 1e9).floor() as usize;
    let out_dist = cfg.aux_size - in_dist;
    if in_dist > first.len() || out_dist > second.len() {
        return Err(Error::InvalidArgument(format!(
            "beta split needs {in_dist} target-half and {out_dist} other-half samples, dataset has {} and {}",
            first.len(),
            second.len()
        )));
    }
    let mut aux = first.split_off(first.len() - in_dist);
    aux.extend(second.into_iter().take(out_dist));
    Ok((ds.with_items(aux), ds.with_items(first)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_vision, ImageShape};
    use std::collections::HashSet;

    fn pool() -> VisionDataset {
        gen_synthetic_vision(8, 3000, ImageShape::new(1, 4, 4), 5).unwrap()
    }

    fn cfg(beta: f64) -> SplitConfig {
        SplitConfig {
            beta,
            aux_size: 1000,
            seed: 2,
        }
    }

    #[test]
    fn beta_one_is_in_distribution() {
        let (aux, target) = split_beta(&pool(), &cfg(1.0)).unwrap();
        assert_eq!(aux.len(), 1000);
        assert!(aux.items.iter().all(|e| e.label.unwrap() < 4));
        assert!(target.items.iter().all(|e| e.label.unwrap() < 4));
    }

    #[test]
    fn beta_zero_is_out_of_distribution() {
        let (aux, _) = split_beta(&pool(), &cfg(0.0)).unwrap();
        assert!(aux.items.iter().all(|e| e.label.unwrap() >= 4));
    }

    #[test]
    fn half_split_counts_and_disjointness() {
        let (aux, target) = split_beta(&pool(), &cfg(0.5)).unwrap();
        let first = aux.items.iter().filter(|e| e.label.unwrap() < 4).count();
        assert_eq!(first, 500);
        assert_eq!(aux.len() - first, 500);
        let a: HashSet<u64> = aux.items.iter().map(|e| e.id).collect();
        assert!(target.items.iter().all(|e| !a.contains(&e.id)));
    }

    #[test]
    fn target_head_is_stable_across_beta() {
        let (_, t0) = split_beta(&pool(), &cfg(0.0)).unwrap();
        let (_, t1) = split_beta(&pool(), &cfg(0.3)).unwrap();
        assert_eq!(t0.items[..100], t1.items[..100]);
    }

    #[test]
    fn rejects_odd_classes_and_oversized_aux() {
        let odd = gen_synthetic_vision(3, 100, ImageShape::new(1, 4, 4), 1).unwrap();
        assert!(split_beta(&odd, &cfg(0.5)).is_err());
        let big = SplitConfig {
            beta: 1.0,
            aux_size: 5000,
            seed: 0,
        };
        assert!(split_beta(&pool(), &big).is_err());
    }
}
