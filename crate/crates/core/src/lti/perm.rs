//! Permutation-invariant batch loss.

use crate::error::{Error, Result};

/// Largest batch for which the exhaustive search over `B!` orders is allowed.
pub const MAX_PERM_BATCH: usize = 8;

/// Per-sample loss between one prediction and one target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingleLoss {
    /// Mean squared error over the sample's coordinates.
    Mse,
    /// Mean over positions of the cross-entropy of `vocab` logits.
    TokenCe { seq_len: usize, vocab: usize },
}

/// One sample's ground truth.
#[derive(Clone, Copy, Debug)]
pub enum TargetRef<'a> {
    Pixels(&'a [f64]),
    Tokens(&'a [u32]),
}

impl SingleLoss {
    fn check(&self, pred: &[f64], target: TargetRef<'_>) -> Result<()> {
        let ok = match (*self, target) {
            (SingleLoss::Mse, TargetRef::Pixels(t)) => t.len() == pred.len() && !t.is_empty(),
            (SingleLoss::TokenCe { seq_len, vocab }, TargetRef::Tokens(t)) => {
                t.len() == seq_len && pred.len() == seq_len * vocab && t.iter().all(|&v| (v as usize) < vocab)
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "prediction of length {} does not fit target under {self:?}",
                pred.len()
            )))
        }
    }

    /// Loss value, and when `grad` is given, writes d loss / d pred into it.
    pub fn eval(&self, pred: &[f64], target: TargetRef<'_>, grad: Option<&mut [f64]>) -> Result<f64> {
        self.check(pred, target)?;
        Ok(match (*self, target) {
            (SingleLoss::Mse, TargetRef::Pixels(t)) => {
                let n = t.len() as f64;
                if let Some(g) = grad {
                    for ((g, p), y) in g.iter_mut().zip(pred).zip(t) {
                        *g = 2.0 * (p - y) / n;
                    }
                }
                pred.iter().zip(t).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n
            }
            (SingleLoss::TokenCe { seq_len, vocab }, TargetRef::Tokens(t)) => {
                let mut grad = grad;
                let mut total = 0.0;
                for (pos, &tok) in t.iter().enumerate() {
                    let row = &pred[pos * vocab..(pos + 1) * vocab];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let log_z = max + sum.ln();
                    total += log_z - row[tok as usize];
                    if let Some(g) = grad.as_deref_mut() {
                        let g = &mut g[pos * vocab..(pos + 1) * vocab];
                        for (j, (g, v)) in g.iter_mut().zip(row).enumerate() {
                            let p = (v - log_z).exp();
                            *g = (p - if j == tok as usize { 1.0 } else { 0.0 }) / seq_len as f64;
                        }
                    }
                }
                total / seq_len as f64
            }
            _ => unreachable!("checked above"),
        })
    }
}

/// Advances `p` to the next permutation in lexicographic order.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Cheapest assignment of a `B × B` cost matrix where `cost[i][j]` pairs
/// prediction `i` with target `j`. Strict improvement is required to replace
/// the incumbent, so the lexicographically smallest optimum wins.
pub fn best_assignment(cost: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let b = cost.len();
    if b == 0 || b > MAX_PERM_BATCH {
        return Err(Error::InvalidArgument(format!(
            "permutation search needs 1 ≤ B ≤ {MAX_PERM_BATCH}, got {b}"
        )));
    }
    if cost.iter().any(|r| r.len() != b) {
        return Err(Error::Shape("cost matrix must be square".into()));
    }
    let mut perm: Vec<usize> = (0..b).collect();
    let mut best = (f64::INFINITY, perm.clone());
    loop {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if total < best.0 {
            best = (total, perm.clone());
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }
    if !best.0.is_finite() {
        return Err(Error::NonFinite("permutation-invariant loss".into()));
    }
    Ok(best)
}

/// `min_π Σ_i ℓ(pred_i, target_π(i))` and the minimizing `π`.
pub fn perm_invariant_loss<P: AsRef<[f64]>>(
    preds: &[P],
    targets: &[TargetRef<'_>],
    single: SingleLoss,
) -> Result<(f64, Vec<usize>)> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    if preds.len() > MAX_PERM_BATCH {
        return Err(Error::InvalidArgument(format!(
            "permutation search needs B ≤ {MAX_PERM_BATCH}, got {}",
            preds.len()
        )));
    }
    let cost = preds
        .iter()
        .map(|p| targets.iter().map(|&t| single.eval(p.as_ref(), t, None)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    best_assignment(&cost)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swapped_pair_is_matched() {
        let preds = [vec![0.0], vec![1.0]];
        let (a, b) = ([1.0], [0.0]);
        let (loss, perm) = perm_invariant_loss(&preds, &[TargetRef::Pixels(&a), TargetRef::Pixels(&b)], SingleLoss::Mse).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(perm, vec![1, 0]);
    }

    #[test]
    fn ties_pick_lexicographically_smallest() {
        let cost = vec![vec![1.0; 3]; 3];
        assert_eq!(best_assignment(&cost).unwrap().1, vec![0, 1, 2]);
    }

    #[test]
    fn rejects_large_batches() {
        let cost = vec![vec![0.0; 9]; 9];
        assert!(best_assignment(&cost).is_err());
    }

    #[test]
    fn permutation_order_is_lexicographic() {
        let mut p = vec![0, 1, 2];
        let mut seen = vec![p.clone()];
        while next_permutation(&mut p) {
            seen.push(p.clone());
        }
        assert_eq!(seen.len(), 6);
        assert!(seen.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn token_ce_of_uniform_logits_is_log_vocab() {
        let single = SingleLoss::TokenCe { seq_len: 2, vocab: 4 };
        let v = single.eval(&[0.0; 8], TargetRef::Tokens(&[1, 3]), None).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }
}
