use gradleak::data::dct::{dct2, idct2};
use gradleak::data::{
    gen_synthetic_text, gen_synthetic_vision, load_dataset, sample_gaussian, sample_unigram, save_dataset, split_beta,
    unigram_frequencies, Dataset, GaussianDomain, GaussianMoments, ImageShape, SplitConfig, TokenTask,
};
use std::f64::consts::PI;

/// Orthonormal 2-D DCT-II straight from the definition.
fn direct_dct(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let alpha = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let mut s = 0.0;
            for i in 0..h {
                for j in 0..w {
                    s += x[i * w + j]
                        * ((PI * (2 * i + 1) as f64 * u as f64) / (2 * h) as f64).cos()
                        * ((PI * (2 * j + 1) as f64 * v as f64) / (2 * w) as f64).cos();
                }
            }
            out[u * w + v] = alpha(u, h) * alpha(v, w) * s;
        }
    }
    out
}

fn moments(shape: ImageShape) -> GaussianMoments {
    let d = shape.len();
    // a mid-grey mean with small spread keeps clipping out of the picture
    let mean = direct_dct(&vec![0.5; d], shape.height, shape.width);
    let variance: Vec<f64> = (0..d).map(|i| 0.0004 * (1.0 + i as f64 / d as f64)).collect();
    GaussianMoments { domain: GaussianDomain::Dct, shape, mean, variance }
}

fn sample_moments(coeffs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = coeffs.len() as f64;
    let d = coeffs[0].len();
    let mean: Vec<f64> = (0..d).map(|k| coeffs.iter().map(|c| c[k]).sum::<f64>() / n).collect();
    let var = (0..d).map(|k| coeffs.iter().map(|c| (c[k] - mean[k]).powi(2)).sum::<f64>() / (n - 1.0)).collect();
    (mean, var)
}

#[test]
fn dct_gaussian_samples_reproduce_the_moments() {
    let shape = ImageShape::new(1, 4, 4);
    let m = moments(shape);
    let n = 10_000;
    let ds = sample_gaussian(&m, n, 2, 0, 7).unwrap();
    let coeffs: Vec<Vec<f64>> = ds.pixels().map(|p| direct_dct(p, 4, 4)).collect();
    let (mean, var) = sample_moments(&coeffs);
    for k in 0..16 {
        // standard errors: sd/sqrt(n) for the mean, variance·sqrt(2/(n-1)) for the variance
        let se_mean = (m.variance[k] / n as f64).sqrt();
        let se_var = m.variance[k] * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean[k] - m.mean[k]).abs() < 4.0 * se_mean, "mean {k}");
        assert!((var[k] - m.variance[k]).abs() < 4.0 * se_var, "variance {k}");
    }
}

#[test]
fn fitted_moments_recover_the_generator() {
    use gradleak::data::{fit_dct_gaussian, VisionDataset};
    use gradleak::model::Example;
    use rand::Rng;
    use rand_distr::StandardNormal;
    let shape = ImageShape::new(1, 4, 4);
    let m = moments(shape);
    let n = 4_000;
    let mut r = gradleak::rng::stream(12);
    // images built directly from Gaussian coefficients through the textbook inverse
    let items = (0..n)
        .map(|i| {
            let c: Vec<f64> = m.mean.iter().zip(&m.variance).map(|(mu, v)| mu + v.sqrt() * r.sample::<f64, _>(StandardNormal)).collect();
            Example::image(i as u64, inverse_direct_dct(&c, 4, 4), 0)
        })
        .collect();
    let ds = VisionDataset { items, class_count: 1, shape, provenance: None };
    let fit = fit_dct_gaussian(&ds).unwrap();
    for k in 0..16 {
        let se_mean = (m.variance[k] / n as f64).sqrt();
        let se_var = m.variance[k] * (2.0 / (n - 1) as f64).sqrt();
        assert!((fit.mean[k] - m.mean[k]).abs() < 3.0 * se_mean, "mean {k}");
        assert!((fit.variance[k] - m.variance[k]).abs() < 3.0 * se_var, "variance {k}");
    }
}

/// Transpose of the orthonormal DCT matrix applied to coefficients.
fn inverse_direct_dct(c: &[f64], h: usize, w: usize) -> Vec<f64> {
    let alpha = |k: usize, n: usize| if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            for u in 0..h {
                for v in 0..w {
                    out[i * w + j] += alpha(u, h)
                        * alpha(v, w)
                        * c[u * w + v]
                        * ((PI * (2 * i + 1) as f64 * u as f64) / (2 * h) as f64).cos()
                        * ((PI * (2 * j + 1) as f64 * v as f64) / (2 * w) as f64).cos();
                }
            }
        }
    }
    out
}

#[test]
fn fast_dct_matches_definition_on_generated_images() {
    let shape = ImageShape::new(3, 8, 8);
    let ds = gen_synthetic_vision(4, 3, shape, 5).unwrap();
    for px in ds.pixels() {
        let fast = dct2(px, shape).unwrap();
        for c in 0..3 {
            let plane = &px[c * 64..(c + 1) * 64];
            let want = direct_dct(plane, 8, 8);
            for (a, b) in fast[c * 64..(c + 1) * 64].iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let back = idct2(&fast, shape).unwrap();
        assert!(back.iter().zip(px).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn uniform_unigram_counts() {
    let ds = sample_unigram(&[0.25; 4], 10_000, 4, TokenTask::LanguageModel, 0, 3).unwrap();
    let mut counts = [0usize; 4];
    ds.sequences().flatten().for_each(|&t| counts[t as usize] += 1);
    // 40000 draws at p = 1/4: mean 10000, sd about 87
    assert!(counts.iter().all(|c| (9_700..=10_300).contains(c)), "{counts:?}");
}

#[test]
fn unigram_samples_converge_in_total_variation() {
    let freqs = [0.4, 0.3, 0.15, 0.1, 0.05];
    let ds = sample_unigram(&freqs, 10_000, 10, TokenTask::LanguageModel, 0, 4).unwrap();
    let mut counts = [0usize; 5];
    ds.sequences().flatten().for_each(|&t| counts[t as usize] += 1);
    let tv: f64 = counts.iter().zip(&freqs).map(|(c, f)| (*c as f64 / 1e5 - f).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn unigram_round_trip_through_the_estimator() {
    let ds = gen_synthetic_text(20, 6, 2_000, TokenTask::LanguageModel, 8).unwrap();
    let f = unigram_frequencies(&ds).unwrap();
    assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let pseudo = sample_unigram(&f, 5_000, 6, TokenTask::LanguageModel, 0, 9).unwrap();
    let g = unigram_frequencies(&pseudo).unwrap();
    let tv: f64 = f.iter().zip(&g).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn half_beta_takes_floor_from_the_first_half() {
    let pool = gen_synthetic_vision(4, 3_000, ImageShape::new(1, 4, 4), 6).unwrap();
    let (aux, _) = split_beta(&pool, &SplitConfig { beta: 0.5, aux_size: 1_000, seed: 2 }).unwrap();
    assert_eq!(aux.items.iter().filter(|e| e.label.unwrap() < 2).count(), 500);
    let (aux, _) = split_beta(&pool, &SplitConfig { beta: 0.5, aux_size: 999, seed: 2 }).unwrap();
    assert_eq!(aux.items.iter().filter(|e| e.label.unwrap() < 2).count(), 499);
}

#[test]
fn beta_split_counts() {
    let pool = gen_synthetic_vision(8, 4_000, ImageShape::new(1, 4, 4), 2).unwrap();
    for beta in [0.0, 0.25, 0.5, 1.0] {
        let (aux, target) = split_beta(&pool, &SplitConfig { beta, aux_size: 400, seed: 1 }).unwrap();
        let in_dist = aux.items.iter().filter(|e| e.label.unwrap() < 4).count();
        assert_eq!(in_dist, (beta * 400.0).floor() as usize);
        assert_eq!(aux.len(), 400);
        assert!(target.items.iter().all(|e| e.label.unwrap() < 4));
        let ids: std::collections::HashSet<u64> = target.items.iter().map(|e| e.id).collect();
        assert!(aux.items.iter().all(|e| !ids.contains(&e.id)));
    }
}

#[test]
fn datasets_survive_a_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let text = Dataset::Tokens(gen_synthetic_text(9, 5, 30, TokenTask::Classification { classes: 3 }, 1).unwrap());
    let path = dir.path().join("text.glkd");
    save_dataset(&text, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back.items(), text.items());
    assert_eq!(back.fingerprint(), text.fingerprint());
}
