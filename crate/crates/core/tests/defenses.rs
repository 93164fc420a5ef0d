mod common;

use gradleak::federated::{
    apply_gauss, apply_prune, apply_sign, prune_keep_count, server_observe, ClientBatch, Defense, DefenseConfig,
};
use gradleak::model::{init_params, loss_and_grad, GradientVector};
use gradleak::rng;
use rand::Rng;

fn random_vec(seed: u64, m: usize) -> Vec<f64> {
    let mut r = rng::stream(seed);
    (0..m).map(|_| r.random_range(-2.0..2.0)).collect()
}

#[test]
fn sign_is_ternary_and_idempotent() {
    let g = random_vec(1, 500);
    let s = apply_sign(&g);
    assert!(s.iter().all(|v| [-1.0, 0.0, 1.0].contains(v)));
    assert_eq!(apply_sign(&s), s);
    for (v, q) in g.iter().zip(s.iter()) {
        assert_eq!(*q, v / v.abs());
    }
}

#[test]
fn prune_keeps_exact_count_and_is_idempotent() {
    // alpha given as a percentage so the oracle is exact integer arithmetic
    for (m, pct) in [(1000usize, 99usize), (777, 50), (10, 0), (3, 90), (2276, 99), (1100, 99)] {
        let alpha = pct as f64 / 100.0;
        let g = random_vec(m as u64, m);
        let p = apply_prune(&g, alpha);
        let keep = ((100 - pct) * m).div_ceil(100);
        assert_eq!(prune_keep_count(m, alpha), keep);
        assert_eq!(p.iter().filter(|v| **v != 0.0).count(), keep);
        assert_eq!(apply_prune(&p, alpha), p);
        // the kept coordinates are the largest in magnitude
        let min_kept = p.iter().filter(|v| **v != 0.0).map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let max_dropped = g
            .iter()
            .zip(p.iter())
            .filter(|(_, q)| **q == 0.0)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max);
        assert!(min_kept >= max_dropped);
    }
}

#[test]
fn gauss_noise_has_the_requested_variance() {
    let zero = GradientVector::zeros(10_000);
    let noisy = apply_gauss(zero, 0.1, &mut rng::stream(3));
    let mean = noisy.iter().sum::<f64>() / 1e4;
    let var = noisy.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (1e4 - 1.0);
    assert!((var - 0.01).abs() < 0.001, "variance {var}");
}

#[test]
fn gauss_with_zero_sigma_is_identity() {
    let g: GradientVector = random_vec(4, 50).into();
    assert_eq!(apply_gauss(g.clone(), 0.0, &mut rng::stream(0)), g);
}

#[test]
fn aggregate_is_the_sum_of_defended_per_sample_gradients() {
    let model = common::small_models().remove(1);
    let w = init_params(&model, 2);
    let mut r = rng::stream(8);
    let batch = ClientBatch::new((0..3).map(|i| common::random_example(&model, i, &mut r)).collect()).unwrap();
    for defense in [Defense::None, Defense::Sign, Defense::Prune { alpha: 0.7 }, Defense::Gauss { sigma: 0.3 }] {
        let cfg = DefenseConfig::new(defense, 21);
        let obs = server_observe(&model, &w, &batch, &cfg, 4).unwrap();
        let mut want = vec![0.0; model.num_params()];
        for ex in &batch.examples {
            let g = cfg.apply(loss_and_grad(&model, &w, ex).unwrap().1, ex.id, 4);
            want.iter_mut().zip(g.iter()).for_each(|(a, b)| *a += b);
        }
        assert_eq!(&*obs.values, &want[..], "{defense}");
        assert_eq!(obs.batch_size, 3);
    }
}

#[test]
fn noise_depends_on_sample_and_epoch_only() {
    let model = common::small_models().remove(0);
    let w = init_params(&model, 2);
    let mut r = rng::stream(8);
    let a = common::random_example(&model, 0, &mut r);
    let b = common::random_example(&model, 1, &mut r);
    let cfg = DefenseConfig::new(Defense::Gauss { sigma: 0.5 }, 9);
    let ab = server_observe(&model, &w, &ClientBatch::new(vec![a.clone(), b.clone()]).unwrap(), &cfg, 0).unwrap();
    let ba = server_observe(&model, &w, &ClientBatch::new(vec![b, a.clone()]).unwrap(), &cfg, 0).unwrap();
    for (x, y) in ab.values.iter().zip(ba.values.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
    let e0 = server_observe(&model, &w, &ClientBatch::new(vec![a.clone()]).unwrap(), &cfg, 0).unwrap();
    let e1 = server_observe(&model, &w, &ClientBatch::new(vec![a]).unwrap(), &cfg, 1).unwrap();
    assert_ne!(e0.values, e1.values);
}
