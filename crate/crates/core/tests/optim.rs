use gradleak::data::{gen_synthetic_text, gen_synthetic_vision, ImageShape, TokenTask};
use gradleak::error::Error;
use gradleak::federated::{server_observe, AggregatedGradient, ClientBatch, Defense, DefenseConfig};
use gradleak::model::{init_params, max_relative_error, EmbeddingSpec, Example, TargetModel, TargetModelSpec};
use gradleak::optim::{
    match_loss, match_loss_and_grad, run_opt_attack, run_text_opt_attack, DummySample, DummyTarget, MatchObjective,
    OptAttackConfig,
};
use gradleak::recon::Reconstruction;
use gradleak::rng;
use rand::Rng;

fn vision() -> (TargetModel, Vec<f64>, Vec<Example>) {
    let model = TargetModel::new(TargetModelSpec::mlp(vec![6], 1, 3, 3, 3)).unwrap();
    let w = init_params(&model, 4).into_inner();
    let data = gen_synthetic_vision(3, 6, ImageShape::new(1, 3, 3), 2).unwrap().items;
    (model, w, data)
}

fn observe(model: &TargetModel, w: &[f64], batch: &[Example], defense: Defense) -> AggregatedGradient {
    server_observe(model, w, &ClientBatch::new(batch.to_vec()).unwrap(), &DefenseConfig::new(defense, 1), 0).unwrap()
}

fn random_dummies(n: usize, d: usize, soft: Option<usize>, seed: u64) -> Vec<DummySample> {
    let mut r = rng::stream(seed);
    (0..n)
        .map(|i| DummySample {
            input: (0..d).map(|_| r.random::<f64>()).collect(),
            target: match soft {
                Some(k) => {
                    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    DummyTarget::Soft(raw.into_iter().map(|v| v / s).collect())
                }
                None => DummyTarget::Class(i % 3),
            },
        })
        .collect()
}

/// Central differences of the match loss over every input and soft-label entry.
fn numeric_grad(
    model: &TargetModel,
    w: &[f64],
    dummies: &[DummySample],
    obs: &AggregatedGradient,
    objective: &MatchObjective,
) -> Vec<f64> {
    let h = 1e-6;
    let f = |d: &[DummySample]| match_loss(model, w, d, obs, objective).unwrap();
    let mut out = Vec::new();
    for b in 0..dummies.len() {
        for i in 0..dummies[b].input.len() {
            let (mut p, mut m) = (dummies.to_vec(), dummies.to_vec());
            p[b].input[i] += h;
            m[b].input[i] -= h;
            out.push((f(&p) - f(&m)) / (2.0 * h));
        }
        if let DummyTarget::Soft(q) = &dummies[b].target {
            for i in 0..q.len() {
                let (mut p, mut m) = (dummies.to_vec(), dummies.to_vec());
                let bump = |d: &mut DummySample, s: f64| {
                    if let DummyTarget::Soft(q) = &mut d.target {
                        q[i] += s;
                    }
                };
                bump(&mut p[b], h);
                bump(&mut m[b], -h);
                out.push((f(&p) - f(&m)) / (2.0 * h));
            }
        }
    }
    out
}

fn flatten(grads: &[gradleak::optim::DummyGrad]) -> Vec<f64> {
    grads
        .iter()
        .flat_map(|g| g.input.iter().chain(g.target.iter().flatten()).copied())
        .collect()
}

#[test]
fn match_gradients_agree_with_finite_differences() {
    let (model, w, data) = vision();
    let cases = [
        (MatchObjective::L2, Defense::None, 2),
        (MatchObjective::Cosine, Defense::Gauss { sigma: 0.1 }, 2),
        (MatchObjective::Tag { l1_weight: 0.3 }, Defense::None, 2),
        (MatchObjective::SignHinge { l1_weight: 0.5 }, Defense::Sign, 1),
        (MatchObjective::TanhSign, Defense::Sign, 3),
        (MatchObjective::MaskedCosine, Defense::Prune { alpha: 0.6 }, 2),
    ];
    for (k, (objective, defense, b)) in cases.into_iter().enumerate() {
        let obs = observe(&model, &w, &data[..b], defense);
        for soft in [None, Some(3)] {
            let dummies = random_dummies(b, 9, soft, 10 + k as u64);
            let (loss, grads) = match_loss_and_grad(&model, &w, &dummies, &obs, &objective).unwrap();
            assert_eq!(loss, match_loss(&model, &w, &dummies, &obs, &objective).unwrap());
            let err = max_relative_error(&flatten(&grads), &numeric_grad(&model, &w, &dummies, &obs, &objective));
            assert!(err < 1e-4, "{} soft={soft:?}: relative error {err}", objective.name());
        }
    }
}

#[test]
fn text_soft_label_gradients_agree_with_finite_differences() {
    let model = TargetModel::new(TargetModelSpec::embed_lm(vec![5], 3, 4, EmbeddingSpec { dim: 2, seed: 1 })).unwrap();
    let w = init_params(&model, 3).into_inner();
    let data = gen_synthetic_text(4, 3, 2, TokenTask::LanguageModel, 1).unwrap().items;
    let obs = observe(&model, &w, &data[..1], Defense::None);
    let mut r = rng::stream(9);
    // three positions, one relaxed target row each
    let dummies = vec![DummySample {
        input: (0..6).map(|_| r.random_range(-1.0..1.0)).collect(),
        target: DummyTarget::Soft((0..12).map(|_| r.random_range(0.0..0.5)).collect()),
    }];
    let objective = MatchObjective::Tag { l1_weight: 0.1 };
    let (_, grads) = match_loss_and_grad(&model, &w, &dummies, &obs, &objective).unwrap();
    assert_eq!(grads[0].target.as_ref().map(Vec::len), Some(12));
    let err = max_relative_error(&flatten(&grads), &numeric_grad(&model, &w, &dummies, &obs, &objective));
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn true_batch_zeroes_the_losses() {
    let (model, w, data) = vision();
    let truth = |batch: &[Example]| -> Vec<DummySample> {
        batch
            .iter()
            .map(|e| DummySample { input: e.input.pixels().unwrap().to_vec(), target: DummyTarget::Class(e.label.unwrap()) })
            .collect()
    };
    let sign1 = observe(&model, &w, &data[..1], Defense::Sign);
    let hinge = MatchObjective::SignHinge { l1_weight: 1.0 };
    assert_eq!(match_loss(&model, &w, &truth(&data[..1]), &sign1, &hinge).unwrap(), 0.0);
    let plain = observe(&model, &w, &data[..2], Defense::None);
    assert!(match_loss(&model, &w, &truth(&data[..2]), &plain, &MatchObjective::L2).unwrap() < 1e-20);
    assert!(match_loss(&model, &w, &truth(&data[..2]), &plain, &MatchObjective::Cosine).unwrap() < 1e-12);
}

#[test]
fn masked_cosine_with_full_mask_is_cosine() {
    let (model, w, data) = vision();
    // alpha = 0 keeps every coordinate; a dead unit could still leave exact
    // zeros, so the observation is made dense by hand
    let mut obs = observe(&model, &w, &data[..2], Defense::Prune { alpha: 0.0 });
    let mut r = rng::stream(2);
    obs.values.iter_mut().for_each(|v| *v += r.random_range(0.5..1.0));
    let d = random_dummies(2, 9, None, 5);
    let masked = match_loss(&model, &w, &d, &obs, &MatchObjective::MaskedCosine).unwrap();
    let plain = match_loss(&model, &w, &d, &obs, &MatchObjective::Cosine).unwrap();
    assert!((masked - plain).abs() < 1e-14);
}

#[test]
fn tanh_sign_prefers_the_true_batch_and_stays_bounded() {
    let (model, w, data) = vision();
    let obs = observe(&model, &w, &data[..3], Defense::Sign);
    let truth: Vec<DummySample> = data[..3]
        .iter()
        .map(|e| DummySample { input: e.input.pixels().unwrap().to_vec(), target: DummyTarget::Class(e.label.unwrap()) })
        .collect();
    let t = match_loss(&model, &w, &truth, &obs, &MatchObjective::TanhSign).unwrap();
    for seed in 0..10 {
        let l = match_loss(&model, &w, &random_dummies(3, 9, None, seed), &obs, &MatchObjective::TanhSign).unwrap();
        assert!((0.0..=2.0).contains(&l));
        assert!(t < l, "true batch {t} vs random {l}");
    }
}

#[test]
fn incompatible_objectives_are_rejected() {
    let (model, w, data) = vision();
    let obs = observe(&model, &w, &data[..2], Defense::None);
    let d = random_dummies(2, 9, None, 1);
    let err = match_loss(&model, &w, &d, &obs, &MatchObjective::MaskedCosine).unwrap_err();
    assert!(matches!(err, Error::IncompatibleObjective { .. }));
    assert!(matches!(match_loss(&model, &w, &d[..1], &obs, &MatchObjective::L2), Err(Error::Shape(_))));
}

#[test]
fn recovers_a_black_image() {
    let model = TargetModel::new(TargetModelSpec::mlp(vec![8], 1, 4, 4, 2)).unwrap();
    let w = init_params(&model, 1).into_inner();
    let target = Example::image(0, vec![0.0; 16], 1);
    let obs = observe(&model, &w, &[target], Defense::None);
    let cfg = OptAttackConfig { steps: 1500, lr: 0.05, ..OptAttackConfig::default() };
    // plain l2 can park the dummy where every hidden unit is dead, which
    // matches the bias gradients exactly without fixing the pixels
    let out = run_opt_attack(&model, &w, &obs, &MatchObjective::Cosine, &cfg, Some(&[1])).unwrap();
    let Reconstruction::Images(r) = out.reconstruction else { unreachable!() };
    let mse = r[0].iter().map(|v| v * v).sum::<f64>() / 16.0;
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn l2_recovers_an_undefended_image_on_tiny_conv_lite() {
    let model = TargetModel::new(TargetModelSpec::conv_lite(2, 1, 4, 4, 2)).unwrap();
    let w = init_params(&model, 3).into_inner();
    let data = gen_synthetic_vision(2, 4, ImageShape::new(1, 4, 4), 8).unwrap().items;
    let cfg = OptAttackConfig { steps: 2000, ..OptAttackConfig::default() };
    for ex in &data {
        let obs = observe(&model, &w, std::slice::from_ref(ex), Defense::None);
        let out = run_opt_attack(&model, &w, &obs, &MatchObjective::L2, &cfg, Some(&[ex.label.unwrap()])).unwrap();
        let Reconstruction::Images(r) = out.reconstruction else { unreachable!() };
        let mse = r[0].iter().zip(ex.input.pixels().unwrap()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 16.0;
        assert!(mse < 0.01, "sample {}: mse {mse}", ex.id);
    }
}

#[test]
fn attack_is_deterministic_and_picks_the_best_restart() {
    let (model, w, data) = vision();
    let obs = observe(&model, &w, &data[..1], Defense::None);
    let cfg = OptAttackConfig { steps: 50, restarts: 3, seed: 4, ..OptAttackConfig::default() };
    let a = run_opt_attack(&model, &w, &obs, &MatchObjective::Cosine, &cfg, Some(&[data[0].label.unwrap()])).unwrap();
    let b = run_opt_attack(&model, &w, &obs, &MatchObjective::Cosine, &cfg, Some(&[data[0].label.unwrap()])).unwrap();
    assert_eq!(a, b);
    assert!(a.restart < 3);
    let single = OptAttackConfig { restarts: 1, ..cfg };
    let one = run_opt_attack(&model, &w, &obs, &MatchObjective::Cosine, &single, Some(&[data[0].label.unwrap()])).unwrap();
    assert!(a.final_loss <= one.final_loss);
}

#[test]
fn text_attack_beats_chance() {
    // the classifier mean-pools embeddings, so only the causal LM pins positions
    let model = TargetModel::new(TargetModelSpec::embed_lm(vec![16], 4, 16, EmbeddingSpec { dim: 4, seed: 2 })).unwrap();
    let w = init_params(&model, 5).into_inner();
    let data = gen_synthetic_text(16, 4, 10, TokenTask::LanguageModel, 3).unwrap().items;
    let cfg = OptAttackConfig { steps: 800, lr: 0.05, ..OptAttackConfig::default() };
    let (mut hits, mut total) = (0, 0);
    for ex in &data {
        let obs = observe(&model, &w, std::slice::from_ref(ex), Defense::None);
        let out = run_text_opt_attack(&model, &w, &obs, &MatchObjective::Cosine, &cfg, None).unwrap();
        let Reconstruction::Tokens(t) = out.reconstruction else { unreachable!() };
        hits += t[0].iter().zip(ex.input.tokens().unwrap()).filter(|(a, b)| a == b).count();
        total += 4;
    }
    let acc = hits as f64 / total as f64;
    assert!(acc > 0.25, "token accuracy {acc}");
}
