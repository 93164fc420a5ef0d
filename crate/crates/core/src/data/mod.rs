//! Desk-scale datasets, auxiliary/target splits and out-of-distribution
//! augmentation.

mod augment;
pub mod dct;
mod io;
mod split;
mod text;
mod vision;

pub use augment::{
    fit_dct_gaussian, fit_gaussian, fit_image_gaussian, sample_dct_gaussian, sample_gaussian, sample_unigram,
    unigram_frequencies, GaussianDomain, GaussianMoments,
};
pub use io::{load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use split::{split_beta, SplitConfig};
pub use text::{gen_synthetic_text, TokenDataset, TokenTask};
pub use vision::{gen_synthetic_vision, ImageShape, VisionDataset, NOISE_AMPLITUDE};

use crate::model::Example;

/// Either modality, as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Vision(VisionDataset),
    Tokens(TokenDataset),
}

impl Dataset {
    pub fn items(&self) -> &[Example] {
        match self {
            Dataset::Vision(d) => &d.items,
            Dataset::Tokens(d) => &d.items,
        }
    }

    pub fn len(&self) -> usize {
        self.items().len()
    }

    pub fn is_empty(&self) -> bool {
        self.items().is_empty()
    }

    /// SHA-256 fingerprint (first 16 hex chars) over labels and inputs.
    pub fn fingerprint(&self) -> String {
        fingerprint(self.items())
    }
}

pub fn fingerprint(items: &[Example]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for ex in items {
        h.update(ex.id.to_le_bytes());
        h.update((ex.label.map(|l| l as i64).unwrap_or(-1)).to_le_bytes());
        match &ex.input {
            crate::model::Input::Pixels(p) => p.iter().for_each(|v| h.update(v.to_le_bytes())),
            crate::model::Input::Tokens(t) => t.iter().for_each(|v| h.update(v.to_le_bytes())),
        }
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}
