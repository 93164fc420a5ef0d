//! One-axis ablation sweeps.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{execute, report_paths, write_outputs};
use crate::error::{Error, Result};
use crate::metrics::ReconstructionReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    AuxSize,
    Beta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::AuxSize => "aux-size",
            SweepAxis::Beta => "beta",
        }
    }

    /// The base config with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::AuxSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config("--values", format!("aux-size must be a positive integer, got {value}")));
                }
                cfg.data.aux_size = value as usize;
            }
            SweepAxis::Beta => cfg.data.beta = value,
        }
        cfg.output.name = format!("{}-{}={value}", base.output.name, self.name());
        cfg.validate()?;
        Ok(cfg)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aux-size" => Ok(SweepAxis::AuxSize),
            "beta" => Ok(SweepAxis::Beta),
            _ => Err(Error::config("--axis", format!("unknown axis \"{s}\"; use aux-size or beta"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub points: Vec<ReconstructionReport>,
}

impl SweepReport {
    /// Mean of `metric` at every point, in sweep order.
    pub fn series(&self, metric: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.metric == metric)
            .map(|r| (r.value, r.mean))
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["axis", "value", "metric", "mean", "std"])?;
        for r in &self.rows {
            w.write_record([
                r.axis.name().to_string(),
                format!("{}", r.value),
                r.metric.clone(),
                format!("{}", r.mean),
                format!("{}", r.std),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Runs the base experiment once per value. Every point uses the base
/// master seed, so the evaluation set, weights and noise streams are shared
/// and only the swept quantity changes.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::config("--values", "a sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut files = Vec::new();
    for (cfg, &value) in configs.iter().zip(values) {
        let report = execute(cfg, None)?;
        for (metric, agg) in &report.aggregates {
            rows.push(SweepRow {
                axis,
                value,
                metric: metric.clone(),
                mean: agg.mean,
                std: agg.std,
            });
        }
        let (json_path, csv_path) = report_paths(cfg);
        files.push((json_path, report.to_json()?));
        files.push((csv_path, report.to_csv()?));
        points.push(report);
    }
    let sweep = SweepReport { rows, points };
    let dir = &base.output.dir;
    files.push((dir.join(format!("{}-sweep.csv", base.output.name)), sweep.to_csv()?));
    write_outputs(&files)?;
    Ok(sweep)
}
