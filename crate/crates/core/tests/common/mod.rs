#![allow(dead_code)]

use gradleak::model::{EmbeddingSpec, Example, TargetModel, TargetModelSpec};
use rand::Rng;

/// One small instance of every architecture.
pub fn small_models() -> Vec<TargetModel> {
    let emb = EmbeddingSpec { dim: 3, seed: 11 };
    [
        TargetModelSpec::mlp(vec![6], 1, 3, 3, 3),
        TargetModelSpec::conv_lite(2, 1, 4, 4, 3),
        TargetModelSpec::embed_classifier(vec![5], 3, 6, emb, 2),
        TargetModelSpec::embed_lm(vec![5], 3, 6, emb),
    ]
    .into_iter()
    .map(|s| TargetModel::new(s).unwrap())
    .collect()
}

pub fn random_example<R: Rng>(model: &TargetModel, id: u64, rng: &mut R) -> Example {
    match (model.seq_len(), model.vocab()) {
        (Some(len), Some(vocab)) => {
            let tokens = (0..len).map(|_| rng.random_range(0..vocab as u32)).collect();
            let label = (model.kind() != gradleak::model::ModelKind::EmbedLm)
                .then(|| rng.random_range(0..model.num_classes()));
            Example::text(id, tokens, label)
        }
        _ => {
            let d = model.spec().input.len();
            Example::image(id, (0..d).map(|_| rng.random::<f64>()).collect(), rng.random_range(0..model.num_classes()))
        }
    }
}

pub fn random_weights<R: Rng>(model: &TargetModel, rng: &mut R) -> Vec<f64> {
    (0..model.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect()
}
