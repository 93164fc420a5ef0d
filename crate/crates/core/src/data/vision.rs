use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Example, InputShape};
use crate::rng;

/// Per-pixel noise is uniform in `[-NOISE_AMPLITUDE, NOISE_AMPLITUDE]`.
pub const NOISE_AMPLITUDE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        ImageShape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl From<ImageShape> for InputShape {
    fn from(s: ImageShape) -> Self {
        InputShape::Image {
            channels: s.channels,
            height: s.height,
            width: s.width,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionDataset {
    pub items: Vec<Example>,
    pub class_count: usize,
    pub shape: ImageShape,
    /// Seed the data was generated from; `None` for loaded or derived data.
    pub provenance: Option<u64>,
}

impl VisionDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.items.iter().filter_map(|e| e.input.pixels())
    }

    pub fn with_items(&self, items: Vec<Example>) -> Self {
        VisionDataset {
            items,
            class_count: self.class_count,
            shape: self.shape,
            provenance: None,
        }
    }
}

const MAX_TEMPLATE_ATTEMPTS: usize = 1000;

/// Synthetic image classes: each class has a smooth template (a base colour
/// per channel plus two low-frequency cosine patterns), and every image adds
/// uniform per-pixel noise before clipping to `[0, 1]`. Templates are redrawn
/// until every pair differs by more than `0.1·sqrt(d)` in L2.
pub fn gen_synthetic_vision(class_count: usize, n: usize, shape: ImageShape, seed: u64) -> Result<VisionDataset> {
    if n == 0 || class_count == 0 || shape.is_empty() {
        return Err(Error::InvalidArgument(
            "synthetic vision needs n > 0, classes > 0 and a non-empty shape".into(),
        ));
    }
    let mut rng = rng::stream(seed);
    let min_dist = 0.1 * (shape.len() as f64).sqrt();
    let mut templates: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    let mut attempts = 0;
    while templates.len() < class_count {
        attempts += 1;
        if attempts > MAX_TEMPLATE_ATTEMPTS * class_count {
            return Err(Error::InvalidArgument(
                "could not draw well-separated class templates for this shape".into(),
            ));
        }
        let t = draw_template(&mut rng, shape);
        if templates.iter().all(|o| l2(o, &t) > min_dist) {
            templates.push(t);
        }
    }
    let items = (0..n)
        .map(|i| {
            let label = rng.random_range(0..class_count);
            let pixels = templates[label]
                .iter()
                .map(|&v| (v + rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE)).clamp(0.0, 1.0))
                .collect();
            Example::image(i as u64, pixels, label)
        })
        .collect();
    Ok(VisionDataset {
        items,
        class_count,
        shape,
        provenance: Some(seed),
    })
}

fn draw_template<R: Rng>(rng: &mut R, shape: ImageShape) -> Vec<f64> {
    let mut out = Vec::with_capacity(shape.len());
    for _ in 0..shape.channels {
        let base: f64 = rng.random_range(0.3..0.7);
        let waves: Vec<(f64, f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                let (fy, fx) = loop {
                    let fy = rng.random_range(0..4) as f64;
                    let fx = rng.random_range(0..4) as f64;
                    if fy + fx > 0.0 {
                        break (fy, fx);
                    }
                };
                (
                    rng.random_range(-0.12..0.12),
                    fy,
                    fx,
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        for y in 0..shape.height {
            for x in 0..shape.width {
                let u = (y as f64 + 0.5) / shape.height as f64;
                let v = (x as f64 + 0.5) / shape.width as f64;
                let mut val = base;
                for &(a, fy, fx, py, px) in &waves {
                    val += a * (PI * fy * u + py).cos() * (PI * fx * v + px).cos();
                }
                out.push(val.clamp(0.2, 0.8));
            }
        }
    }
    out
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_in_range_and_noisy() {
        let ds = gen_synthetic_vision(4, 200, ImageShape::new(3, 8, 8), 1).unwrap();
        assert_eq!(ds.len(), 200);
        assert!(ds.pixels().flatten().all(|&v| (0.0..=1.0).contains(&v)));
        let by_class: Vec<&Example> = ds.items.iter().filter(|e| e.label == Some(0)).take(2).collect();
        assert_ne!(by_class[0].input, by_class[1].input);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = ImageShape::new(3, 8, 8);
        assert_eq!(
            gen_synthetic_vision(4, 20, s, 7).unwrap(),
            gen_synthetic_vision(4, 20, s, 7).unwrap()
        );
        assert_ne!(
            gen_synthetic_vision(4, 20, s, 7).unwrap().items,
            gen_synthetic_vision(4, 20, s, 8).unwrap().items
        );
    }

    #[test]
    fn class_means_are_separated() {
        // class means estimate the templates; noise averages out
        let shape = ImageShape::new(3, 8, 8);
        let ds = gen_synthetic_vision(8, 4000, shape, 3).unwrap();
        let d = shape.len();
        let mut sums = vec![vec![0.0; d]; 8];
        let mut counts = vec![0usize; 8];
        for e in &ds.items {
            let c = e.label.unwrap();
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(e.input.pixels().unwrap()) {
                *s += v;
            }
        }
        let means: Vec<Vec<f64>> = sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| s.iter().map(|v| v / n as f64).collect())
            .collect();
        for a in 0..8 {
            for b in a + 1..8 {
                assert!(l2(&means[a], &means[b]) > 0.1 * (d as f64).sqrt() * 0.9);
            }
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(gen_synthetic_vision(4, 0, ImageShape::new(3, 8, 8), 0).is_err());
    }
}
