use gradleak::hashing::{hashed_dim, HashProjection};
use gradleak::rng;
use proptest::prelude::*;
use rand::Rng;

/// Dense 0/1 matrix with `P[r(i), i] = 1`.
fn dense(h: &HashProjection) -> Vec<Vec<f64>> {
    let mut p = vec![vec![0.0; h.source_dim()]; h.target_dim()];
    for (i, &b) in h.bins().iter().enumerate() {
        p[b as usize][i] = 1.0;
    }
    p
}

proptest! {
    #[test]
    fn projection_equals_dense_matrix_product(m in 1usize..=64, kf in 0.01f64..1.0, seed in any::<u64>()) {
        let k = ((m as f64 * kf).ceil() as usize).clamp(1, m);
        let h = HashProjection::new(m, k, seed).unwrap();
        let mut r = rng::stream(seed ^ 1);
        let g: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let want: Vec<f64> = dense(&h).iter().map(|row| row.iter().zip(&g).map(|(a, b)| a * b).sum()).collect();
        let got = h.project(&g).unwrap();
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_linear_and_preserves_sums(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (m, k) = (300, 37);
        let h = HashProjection::new(m, k, seed).unwrap();
        let mut r = rng::stream(seed);
        let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
        let comb: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (px, py, pc) = (h.project(&x).unwrap(), h.project(&y).unwrap(), h.project(&comb).unwrap());
        for i in 0..k {
            prop_assert!((pc[i] - (a * px[i] + b * py[i])).abs() < 1e-12);
        }
        prop_assert!((px.iter().sum::<f64>() - x.iter().sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn hashed_dim_rounds_to_a_valid_size() {
    assert_eq!(hashed_dim(1000, 0.5), 500);
    assert_eq!(hashed_dim(10, 1.0), 10);
    assert!(hashed_dim(7, 0.01) >= 1);
}

#[test]
fn rebuild_restores_bins() {
    let h = HashProjection::new(100, 10, 4).unwrap();
    let json = serde_json::to_string(&h).unwrap();
    let back: HashProjection = serde_json::from_str(&json).unwrap();
    assert_eq!(back.rebuild().unwrap(), h);
}
