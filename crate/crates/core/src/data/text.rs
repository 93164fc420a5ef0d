use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum TokenTask {
    Classification { classes: usize },
    /// Targets are the sequence itself.
    LanguageModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenDataset {
    pub items: Vec<Example>,
    pub vocab: usize,
    pub seq_len: usize,
    pub task: TokenTask,
    pub provenance: Option<u64>,
}

impl TokenDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[u32]> {
        self.items.iter().filter_map(|e| e.input.tokens())
    }

    pub fn with_items(&self, items: Vec<Example>) -> Self {
        TokenDataset {
            items,
            vocab: self.vocab,
            seq_len: self.seq_len,
            task: self.task,
            provenance: None,
        }
    }
}

/// Successors each token strongly prefers in the synthetic Markov chain.
const FAVOURED_SUCCESSORS: usize = 3;
/// Probability mass the chain puts on favoured successors.
const FAVOURED_MASS: f64 = 0.85;

/// Synthetic corpus from a sparse first-order Markov chain over a Zipfian
/// unigram distribution, so positions depend on each other. For the
/// classification task the vocabulary is split into `classes` contiguous
/// groups and the label is the group of the first token.
pub fn gen_synthetic_text(vocab: usize, seq_len: usize, n: usize, task: TokenTask, seed: u64) -> Result<TokenDataset> {
    if vocab < 2 || seq_len == 0 || n == 0 {
        return Err(Error::InvalidArgument(
            "synthetic text needs vocab >= 2, seq_len > 0 and n > 0".into(),
        ));
    }
    if let TokenTask::Classification { classes } = task {
        if classes < 2 || classes > vocab {
            return Err(Error::InvalidArgument(format!(
                "classification over {classes} classes needs 2 <= classes <= vocab"
            )));
        }
    }
    let mut rng = rng::stream(seed);
    let mut ranks: Vec<usize> = (0..vocab).collect();
    ranks.shuffle(&mut rng);
    let unigram: Vec<f64> = ranks.iter().map(|&r| 1.0 / (r as f64 + 1.0)).collect();
    let total: f64 = unigram.iter().sum();
    let unigram: Vec<f64> = unigram.iter().map(|p| p / total).collect();

    let transitions: Vec<WeightedIndex<f64>> = (0..vocab)
        .map(|_| {
            let mut row: Vec<f64> = unigram.iter().map(|p| p * (1.0 - FAVOURED_MASS)).collect();
            let raw: Vec<f64> = (0..FAVOURED_SUCCESSORS).map(|_| rng.random_range(0.5..1.0)).collect();
            let raw_sum: f64 = raw.iter().sum();
            for w in raw {
                let next = rng.random_range(0..vocab);
                row[next] += FAVOURED_MASS * w / raw_sum;
            }
            WeightedIndex::new(&row).expect("positive weights")
        })
        .collect();
    let start = WeightedIndex::new(&unigram).expect("positive weights");

    let items = (0..n)
        .map(|i| {
            let mut seq = Vec::with_capacity(seq_len);
            let mut tok = start.sample(&mut rng);
            seq.push(tok as u32);
            for _ in 1..seq_len {
                tok = transitions[tok].sample(&mut rng);
                seq.push(tok as u32);
            }
            let label = match task {
                TokenTask::Classification { classes } => Some(seq[0] as usize * classes / vocab),
                TokenTask::LanguageModel => None,
            };
            Example::text(i as u64, seq, label)
        })
        .collect();
    Ok(TokenDataset {
        items,
        vocab,
        seq_len,
        task,
        provenance: Some(seed),
    })
}
