use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dct::{dct2, idct2};
use super::text::{TokenDataset, TokenTask};
use super::vision::{ImageShape, VisionDataset};
use crate::error::{Error, Result};
use crate::model::Example;
use crate::rng;

/// Space in which coordinatewise Gaussian moments are fitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaussianDomain {
    Dct,
    /// Identity transform: moments of raw pixels.
    Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMoments {
    pub domain: GaussianDomain,
    pub shape: ImageShape,
    pub mean: Vec<f64>,
    /// Unbiased per-coordinate variance.
    pub variance: Vec<f64>,
}

pub fn fit_gaussian(ds: &VisionDataset, domain: GaussianDomain) -> Result<GaussianMoments> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "fitting moments needs at least 2 images, got {n}"
        )));
    }
    let d = ds.shape.len();
    let coords: Vec<Vec<f64>> = ds
        .pixels()
        .map(|px| match domain {
            GaussianDomain::Dct => dct2(px, ds.shape),
            GaussianDomain::Image => Ok(px.to_vec()),
        })
        .collect::<Result<_>>()?;
    let mut mean = vec![0.0; d];
    for c in &coords {
        for (m, v) in mean.iter_mut().zip(c) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut variance = vec![0.0; d];
    for c in &coords {
        for ((s, v), m) in variance.iter_mut().zip(c).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    variance.iter_mut().for_each(|s| *s /= (n - 1) as f64);
    Ok(GaussianMoments {
        domain,
        shape: ds.shape,
        mean,
        variance,
    })
}

/// Mean and unbiased variance of the DCT coefficients of `ds`.
pub fn fit_dct_gaussian(ds: &VisionDataset) -> Result<GaussianMoments> {
    fit_gaussian(ds, GaussianDomain::Dct)
}

pub fn fit_image_gaussian(ds: &VisionDataset) -> Result<GaussianMoments> {
    fit_gaussian(ds, GaussianDomain::Image)
}

/// Draws `n` images from the fitted Gaussian, maps them back to pixel space
/// and clips to `[0, 1]`. Labels are uniform over `class_count`; ids start at
/// `first_id`.
pub fn sample_gaussian(
    moments: &GaussianMoments,
    n: usize,
    class_count: usize,
    first_id: u64,
    seed: u64,
) -> Result<VisionDataset> {
    let d = moments.shape.len();
    if moments.mean.len() != d || moments.variance.len() != d {
        return Err(Error::Shape("moments do not match their image shape".into()));
    }
    if moments.variance.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument("variances must be non-negative".into()));
    }
    if class_count == 0 {
        return Err(Error::InvalidArgument("class_count must be positive".into()));
    }
    let mut rng = rng::stream(seed);
    let std: Vec<f64> = moments.variance.iter().map(|v| v.sqrt()).collect();
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let coeffs: Vec<f64> = moments
            .mean
            .iter()
            .zip(&std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let pixels = match moments.domain {
            GaussianDomain::Dct => idct2(&coeffs, moments.shape)?,
            GaussianDomain::Image => coeffs,
        };
        let label = rng.random_range(0..class_count);
        items.push(Example::image(
            first_id + i as u64,
            pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            label,
        ));
    }
    Ok(VisionDataset {
        items,
        class_count,
        shape: moments.shape,
        provenance: Some(seed),
    })
}

pub fn sample_dct_gaussian(
    moments: &GaussianMoments,
    n: usize,
    class_count: usize,
    first_id: u64,
    seed: u64,
) -> Result<VisionDataset> {
    if moments.domain != GaussianDomain::Dct {
        return Err(Error::InvalidArgument("moments were not fitted in the DCT domain".into()));
    }
    sample_gaussian(moments, n, class_count, first_id, seed)
}

/// Normalized token frequencies over all positions of all sequences.
pub fn unigram_frequencies(ds: &TokenDataset) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; ds.vocab];
    for seq in ds.sequences() {
        for &t in seq {
            let slot = counts
                .get_mut(t as usize)
                .ok_or_else(|| Error::Shape(format!("token {t} outside vocab {}", ds.vocab)))?;
            *slot += 1.0;
        }
    }
    normalize(counts)
}

fn normalize(freqs: Vec<f64>) -> Result<Vec<f64>> {
    if freqs.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
        return Err(Error::InvalidArgument("frequencies must be finite and non-negative".into()));
    }
    let total: f64 = freqs.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidArgument("frequency vector is all zero".into()));
    }
    Ok(freqs.into_iter().map(|f| f / total).collect())
}

/// Pseudo sequences whose positions are drawn i.i.d. from `freqs`
/// (normalized first). Classification labels are uniform.
pub fn sample_unigram(
    freqs: &[f64],
    n: usize,
    seq_len: usize,
    task: TokenTask,
    first_id: u64,
    seed: u64,
) -> Result<TokenDataset> {
    let freqs = normalize(freqs.to_vec())?;
    let dist = WeightedIndex::new(&freqs).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng::stream(seed);
    let items = (0..n)
        .map(|i| {
            let seq: Vec<u32> = (0..seq_len).map(|_| dist.sample(&mut rng) as u32).collect();
            let label = match task {
                TokenTask::Classification { classes } => Some(rng.random_range(0..classes)),
                TokenTask::LanguageModel => None,
            };
            Example::text(first_id + i as u64, seq, label)
        })
        .collect();
    Ok(TokenDataset {
        items,
        vocab: freqs.len(),
        seq_len,
        task,
        provenance: Some(seed),
    })
}
