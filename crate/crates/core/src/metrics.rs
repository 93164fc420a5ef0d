//! Reconstruction quality metrics and report assembly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PSNR reported for (near-)perfect reconstructions.
pub const PSNR_CAP_DB: f64 = 100.0;
/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::Shape(format!("cannot compare inputs of lengths {a} and {b}")));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(1 / mse)` for pixel range 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(mse: f64) -> Result<f64> {
    if !(mse >= 0.0) {
        return Err(Error::InvalidArgument(format!("mse must be non-negative, got {mse}")));
    }
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean local SSIM over every 8×8 window (stride 1), averaged over channels.
/// Images are CHW with the given channel, height and width.
pub fn ssim(a: &[f64], b: &[f64], channels: usize, height: usize, width: usize) -> Result<f64> {
    same_len(a.len(), b.len())?;
    if channels * height * width != a.len() {
        return Err(Error::Shape("image shape does not match pixel count".into()));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Shape(format!("SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}")));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..channels {
        let plane = c * height * width;
        for y0 in 0..=height - SSIM_WINDOW {
            for x0 in 0..=width - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let (p, q) = (a[plane + y * width + x], b[plane + y * width + x]);
                        sa += p;
                        sb += q;
                        saa += p * p;
                        sbb += q * q;
                        sab += p * q;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Percentage of positions where the sequences agree.
pub fn token_accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    same_len(pred.len(), truth.len())?;
    Ok(100.0 * pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

fn f1(overlap: f64, pred_len: usize, truth_len: usize) -> f64 {
    if overlap == 0.0 || pred_len == 0 {
        return 0.0;
    }
    let p = overlap / pred_len as f64;
    let r = overlap / truth_len as f64;
    100.0 * 2.0 * p * r / (p + r)
}

/// F1 of clipped n-gram overlap, in percent.
pub fn rouge_n(pred: &[u32], truth: &[u32], n: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("ROUGE needs a non-empty reference".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("ROUGE-n needs n ≥ 1".into()));
    }
    fn grams(s: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
        let mut m = BTreeMap::new();
        for g in s.windows(n) {
            *m.entry(g).or_default() += 1;
        }
        m
    }
    let (gp, gt) = (grams(pred, n), grams(truth, n));
    let overlap: usize = gp.iter().map(|(g, c)| (*c).min(gt.get(g).copied().unwrap_or(0))).sum();
    let count = |s: &[u32]| s.len().saturating_sub(n - 1);
    Ok(f1(overlap as f64, count(pred), count(truth)))
}

/// F1 built from the longest common subsequence, in percent.
pub fn rouge_l(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::InvalidArgument("ROUGE needs a non-empty reference".into()));
    }
    let mut prev = vec![0usize; truth.len() + 1];
    for &p in pred {
        let mut cur = vec![0usize; truth.len() + 1];
        for (j, &t) in truth.iter().enumerate() {
            cur[j + 1] = if p == t { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    Ok(f1(prev[truth.len()] as f64, pred.len(), truth.len()))
}

/// One sample's scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub manifest: serde_json::Value,
    pub records: Vec<SampleRecord>,
    pub aggregates: BTreeMap<String, Aggregate>,
}

pub fn assemble_report(records: Vec<SampleRecord>, manifest: serde_json::Value) -> Result<ReconstructionReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("a report needs at least one record".into()));
    }
    let mut columns = BTreeMap::<String, Vec<f64>>::new();
    for r in &records {
        for (k, v) in &r.metrics {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    let aggregates = columns
        .into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
            (k, Aggregate { mean, std })
        })
        .collect();
    Ok(ReconstructionReport {
        manifest,
        records,
        aggregates,
    })
}

impl ReconstructionReport {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregates.get(metric).map(|a| a.mean)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One `sample_id,metric,value` row per sample and metric.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sample_id", "metric", "value"])?;
        for r in &self.records {
            for (k, v) in &r.metrics {
                w.write_record([r.sample_id.to_string(), k.clone(), format!("{v}")])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Whether lower or higher values of a metric are better.
pub fn lower_is_better(metric: &str) -> bool {
    metric == "mse"
}

/// Methods sorted best-first by their mean of `metric` (name breaks ties).
pub fn rank_methods(means: &[(String, f64)], metric: &str) -> Vec<(String, f64)> {
    let mut v = means.to_vec();
    v.sort_by(|a, b| {
        let ord = a.1.total_cmp(&b.1);
        let ord = if lower_is_better(metric) { ord } else { ord.reverse() };
        ord.then_with(|| a.0.cmp(&b.0))
    });
    v
}

/// Human-readable ordering such as `LTI < GI-GIP < IG`; `<` reads "better than".
pub fn ordering_line(means: &[(String, f64)], metric: &str) -> String {
    let mut out = String::new();
    for (i, (name, value)) in rank_methods(means, metric).iter().enumerate() {
        if i > 0 {
            out.push_str(" < ");
        }
        let _ = write!(out, "{name} ({value:.4})");
    }
    out
}
