//! The experiment pipeline: data, weights, attack, scores, reports.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{AttackConfig, Augmentation, DataSource, ExperimentConfig, Task};
use crate::data::{
    self, fit_gaussian, gen_synthetic_text, gen_synthetic_vision, load_dataset, sample_gaussian, sample_unigram,
    split_beta, unigram_frequencies, Dataset, GaussianDomain, ImageShape, SplitConfig, TokenDataset, TokenTask,
    VisionDataset,
};
use crate::error::{Error, Result};
use crate::federated::{server_observe, ClientBatch, DefenseConfig};
use crate::hashing::{hashed_dim, HashProjection};
use crate::lti::{
    best_assignment, invert, train_inverter, InverterSpec, OutputHead, TrainedInverter, TrainingLog,
};
use crate::metrics::{self, assemble_report, ReconstructionReport, SampleRecord};
use crate::model::{fingerprint, init_params, Example, InputShape, TargetModel, TargetModelSpec};
use crate::optim::{run_opt_attack, run_text_opt_attack};
use crate::recon::Reconstruction;
use crate::rng::{derive_seed, labeled_stream};

/// Seeds of one run, each derived from the master seed by label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub data: u64,
    pub split: u64,
    pub init: u64,
    pub attack: u64,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Seeds {
            master,
            data: derive_seed(master, "data"),
            split: derive_seed(master, "split"),
            init: derive_seed(master, "init"),
            attack: derive_seed(master, "attack"),
        }
    }
}

/// A weight snapshot as written by `snapshot-model`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSnapshot {
    pub model: TargetModelSpec,
    pub fingerprint: String,
    pub weights: Vec<f64>,
}

impl WeightSnapshot {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap: WeightSnapshot = serde_json::from_slice(&fs::read(path)?)?;
        let model = TargetModel::new(snap.model.clone())?;
        if snap.weights.len() != model.num_params() || fingerprint(&model, &snap.weights) != snap.fingerprint {
            return Err(Error::Format(format!("weight snapshot {} is corrupt", path.display())));
        }
        Ok(snap)
    }
}

/// Everything the attacks need, built deterministically from the config.
pub struct Prepared {
    pub seeds: Seeds,
    pub model: TargetModel,
    pub w: Vec<f64>,
    pub defense: DefenseConfig,
    /// Victim samples, scored in this order.
    pub eval: Vec<Example>,
    /// What the attacker trains on (auxiliary data plus augmentation).
    pub train: Vec<Example>,
    pub pool_fingerprint: String,
}

fn config_err(field: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        e @ Error::Config { .. } => e,
        other => Error::config(field, other.to_string()),
    }
}

/// Builds the data pool named by the config.
pub fn build_pool(cfg: &ExperimentConfig) -> Result<Dataset> {
    let seeds = Seeds::new(cfg.seed);
    Ok(match &cfg.data.pool {
        DataSource::SyntheticVision {
            classes,
            channels,
            height,
            width,
            pool_size,
        } => Dataset::Vision(gen_synthetic_vision(
            *classes,
            *pool_size,
            ImageShape::new(*channels, *height, *width),
            seeds.data,
        )?),
        DataSource::SyntheticText {
            vocab,
            seq_len,
            pool_size,
        } => Dataset::Tokens(gen_synthetic_text(*vocab, *seq_len, *pool_size, token_task(cfg), seeds.data)?),
        DataSource::File { path } => {
            let ds = load_dataset(path).map_err(|e| Error::config("data.pool.path", e.to_string()))?;
            if ds.len() < cfg.data.eval_size + cfg.data.aux_size {
                return Err(Error::config(
                    "data.aux_size",
                    format!("eval_size + aux_size exceeds the {} items of the file", ds.len()),
                ));
            }
            ds
        }
    })
}

fn token_task(cfg: &ExperimentConfig) -> TokenTask {
    match cfg.task {
        Task::TextLm => TokenTask::LanguageModel,
        _ => TokenTask::Classification {
            classes: cfg.model.num_classes,
        },
    }
}

/// Out-of-distribution labels are folded into the model's label range.
fn fold_labels(items: Vec<Example>, classes: usize) -> Vec<Example> {
    items
        .into_iter()
        .map(|mut e| {
            e.label = e.label.map(|l| l % classes);
            e
        })
        .collect()
}

fn next_id(items: &[Example]) -> u64 {
    items.iter().map(|e| e.id + 1).max().unwrap_or(0)
}

fn prepare_vision(cfg: &ExperimentConfig, pool: &VisionDataset, seeds: &Seeds) -> Result<(Vec<Example>, Vec<Example>)> {
    if InputShape::from(pool.shape) != cfg.model.input {
        return Err(Error::config("data.pool", "dataset image shape differs from model.input"));
    }
    let classes = cfg.model.num_classes;
    if pool.class_count != 2 * classes {
        return Err(Error::config(
            "data.pool",
            format!(
                "dataset has {} classes; expected {} (target half plus out-of-distribution half)",
                pool.class_count,
                2 * classes
            ),
        ));
    }
    let split = SplitConfig {
        beta: cfg.data.beta,
        aux_size: cfg.data.aux_size,
        seed: seeds.split,
    };
    let (aux, target) = split_beta(pool, &split).map_err(config_err("data.aux_size"))?;
    if target.len() < cfg.data.eval_size {
        return Err(Error::config(
            "data.eval_size",
            format!("only {} in-distribution samples remain for evaluation", target.len()),
        ));
    }
    let eval = target.items[..cfg.data.eval_size].to_vec();
    let mut train = fold_labels(aux.items.clone(), classes);
    let domain = match cfg.data.augmentation {
        Augmentation::DctGaussian => Some(GaussianDomain::Dct),
        Augmentation::ImageGaussian => Some(GaussianDomain::Image),
        _ => None,
    };
    if let Some(domain) = domain {
        let moments = fit_gaussian(&aux, domain).map_err(config_err("data.augmentation"))?;
        let n = cfg.data.augment_size.unwrap_or(cfg.data.aux_size);
        let extra = sample_gaussian(
            &moments,
            n,
            classes,
            next_id(&pool.items),
            derive_seed(seeds.data, "augment"),
        )?;
        train.extend(extra.items);
    }
    Ok((eval, train))
}

fn prepare_text(cfg: &ExperimentConfig, pool: &TokenDataset, seeds: &Seeds) -> Result<(Vec<Example>, Vec<Example>)> {
    if (InputShape::Tokens {
        seq_len: pool.seq_len,
        vocab: pool.vocab,
    }) != cfg.model.input
    {
        return Err(Error::config("data.pool", "dataset sequences differ from model.input"));
    }
    if pool.task != token_task(cfg) {
        return Err(Error::config("data.pool", format!("dataset task {:?} does not fit {:?}", pool.task, cfg.task)));
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut labeled_stream(seeds.split, "shuffle"));
    let eval: Vec<Example> = order[..cfg.data.eval_size].iter().map(|&i| pool.items[i].clone()).collect();
    let aux: Vec<Example> = order[cfg.data.eval_size..cfg.data.eval_size + cfg.data.aux_size]
        .iter()
        .map(|&i| pool.items[i].clone())
        .collect();
    let train = match cfg.data.augmentation {
        Augmentation::Unigram => {
            // only word frequencies are assumed known; the pseudo data replaces the corpus
            let freqs = unigram_frequencies(&pool.with_items(aux))?;
            let n = cfg.data.augment_size.unwrap_or(cfg.data.aux_size);
            sample_unigram(
                &freqs,
                n,
                pool.seq_len,
                pool.task,
                next_id(&pool.items),
                derive_seed(seeds.data, "augment"),
            )?
            .items
        }
        _ => aux,
    };
    Ok((eval, train))
}

/// Data, weights and defense of an experiment.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let seeds = Seeds::new(cfg.seed);
    let pool = build_pool(cfg)?;
    let (eval, train) = match &pool {
        Dataset::Vision(v) if !cfg.task.is_text() => prepare_vision(cfg, v, &seeds)?,
        Dataset::Tokens(t) if cfg.task.is_text() => prepare_text(cfg, t, &seeds)?,
        _ => return Err(Error::config("data.pool", "dataset modality does not match the task")),
    };
    let eval_ids: HashSet<u64> = eval.iter().map(|e| e.id).collect();
    assert!(
        train.iter().all(|e| !eval_ids.contains(&e.id)),
        "evaluation and auxiliary samples overlap"
    );
    let model = TargetModel::new(cfg.model.clone()).map_err(config_err("model"))?;
    let w = match &cfg.weights {
        Some(path) => {
            let snap = WeightSnapshot::load(path).map_err(config_err("weights"))?;
            if snap.model != cfg.model {
                return Err(Error::config("weights", "snapshot was taken of a different model"));
            }
            snap.weights
        }
        None => init_params(&model, seeds.init).into_inner(),
    };
    Ok(Prepared {
        seeds,
        model,
        w,
        // noise streams derive from the master seed as "noise:<sample>:<epoch>"
        defense: DefenseConfig::new(cfg.defense, seeds.master),
        eval,
        train,
        pool_fingerprint: pool.fingerprint(),
    })
}

/// Inverter architecture and hash for a config.
pub fn inverter_setup(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(InverterSpec, Option<HashProjection>)> {
    let AttackConfig::Lti(lti) = &cfg.attack else {
        return Err(Error::config("attack.kind", "expected the learned attack (lti)"));
    };
    let m = prep.model.num_params();
    let hash = lti
        .hash_ratio
        .map(|r| HashProjection::new(m, hashed_dim(m, r), derive_seed(prep.seeds.attack, "hash")))
        .transpose()?;
    let b = cfg.batch_size;
    let head = match cfg.model.input {
        InputShape::Image { .. } => OutputHead::Continuous {
            batch: b,
            dim: cfg.model.input.len(),
        },
        InputShape::Tokens { seq_len, vocab } => OutputHead::Tokens {
            batch: b,
            seq_len,
            vocab,
        },
    };
    let spec = InverterSpec {
        input_dim: hash.as_ref().map_or(m, |h| h.target_dim()),
        hidden: lti.hidden.clone(),
        head,
    };
    Ok((spec, hash))
}

/// Trains the learned attack on the prepared auxiliary data.
pub fn train_stage(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(TrainedInverter, TrainingLog)> {
    let (spec, hash) = inverter_setup(cfg, prep)?;
    let AttackConfig::Lti(lti) = &cfg.attack else { unreachable!("checked by inverter_setup") };
    let mut train_cfg = lti.train.clone();
    train_cfg.seed = derive_seed(prep.seeds.attack, "lti");
    train_inverter(&prep.train, &prep.model, &prep.w, &prep.defense, &spec, &train_cfg, hash.as_ref())
}

fn eval_batches(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<ClientBatch>> {
    prep.eval
        .chunks(cfg.batch_size)
        .map(|c| ClientBatch::new(c.to_vec()))
        .collect()
}

/// Reconstructions of every evaluation batch by the learned attack.
pub fn attack_lti(cfg: &ExperimentConfig, prep: &Prepared, inv: &TrainedInverter) -> Result<Vec<Reconstruction>> {
    if inv.manifest.model_fingerprint != fingerprint(&prep.model, &prep.w) {
        return Err(Error::InvalidArgument("inverter was trained against different model weights".into()));
    }
    eval_batches(cfg, prep)?
        .par_iter()
        .map(|batch| invert(inv, &server_observe(&prep.model, &prep.w, batch, &prep.defense, 0)?))
        .collect()
}

/// Reconstructions of every evaluation batch by the optimization baseline.
pub fn attack_opt(cfg: &ExperimentConfig, prep: &Prepared) -> Result<Vec<Reconstruction>> {
    let AttackConfig::OptBaseline(opt) = &cfg.attack else {
        return Err(Error::config("attack.kind", "expected the optimization baseline (opt-baseline)"));
    };
    let objective = cfg.objective().expect("optimization attack");
    eval_batches(cfg, prep)?
        .par_iter()
        .enumerate()
        .map(|(i, batch)| {
            let observed = server_observe(&prep.model, &prep.w, batch, &prep.defense, 0)?;
            let mut run = opt.optimizer.clone();
            run.seed = derive_seed(prep.seeds.attack, &format!("batch:{i}"));
            let labels: Option<Vec<usize>> = batch.examples.iter().map(|e| e.label).collect();
            let outcome = if cfg.task.is_text() {
                run_text_opt_attack(&prep.model, &prep.w, &observed, &objective, &run, labels.as_deref())?
            } else {
                run_opt_attack(&prep.model, &prep.w, &observed, &objective, &run, labels.as_deref())?
            };
            Ok(outcome.reconstruction)
        })
        .collect()
}

fn sample_metrics(cfg: &ExperimentConfig, pred: &Reconstruction, i: usize, truth: &Example) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for name in cfg.metric_names() {
        let v = match (pred, &truth.input) {
            (Reconstruction::Images(p), crate::model::Input::Pixels(x)) => {
                let InputShape::Image { channels, height, width } = cfg.model.input else {
                    unreachable!("validated")
                };
                match name.as_str() {
                    "mse" => metrics::mse(&p[i], x)?,
                    "psnr" => metrics::psnr(metrics::mse(&p[i], x)?)?,
                    "ssim" => metrics::ssim(&p[i], x, channels, height, width)?,
                    _ => unreachable!("validated"),
                }
            }
            (Reconstruction::Tokens(p), crate::model::Input::Tokens(x)) => match name.as_str() {
                "accuracy" => metrics::token_accuracy(&p[i], x)?,
                "rouge1" => metrics::rouge_n(&p[i], x, 1)?,
                "rouge2" => metrics::rouge_n(&p[i], x, 2)?,
                "rougeL" => metrics::rouge_l(&p[i], x)?,
                _ => unreachable!("validated"),
            },
            _ => return Err(Error::Shape("reconstruction modality differs from the data".into())),
        };
        out.push((name, v));
    }
    Ok(out)
}

/// Scores reconstructions against the evaluation set after matching each
/// batch's predictions to its samples with the cheapest permutation.
pub fn score(cfg: &ExperimentConfig, prep: &Prepared, recons: &[Reconstruction]) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::with_capacity(prep.eval.len());
    for (batch, pred) in prep.eval.chunks(cfg.batch_size).zip(recons) {
        if pred.len() != batch.len() {
            return Err(Error::Shape("reconstruction batch size differs from the evaluation batch".into()));
        }
        let cost = (0..batch.len())
            .map(|i| {
                batch
                    .iter()
                    .map(|t| match (pred, &t.input) {
                        (Reconstruction::Images(p), crate::model::Input::Pixels(x)) => metrics::mse(&p[i], x),
                        (Reconstruction::Tokens(p), crate::model::Input::Tokens(x)) => {
                            metrics::token_accuracy(&p[i], x).map(|a| 100.0 - a)
                        }
                        _ => Err(Error::Shape("reconstruction modality differs from the data".into())),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, perm) = best_assignment(&cost)?;
        let mut matched: Vec<(usize, usize)> = perm.iter().enumerate().map(|(i, &j)| (j, i)).collect();
        matched.sort_unstable();
        for (j, i) in matched {
            records.push(SampleRecord {
                sample_id: batch[j].id,
                metrics: sample_metrics(cfg, pred, i, &batch[j])?.into_iter().collect(),
            });
        }
    }
    Ok(records)
}

fn manifest(cfg: &ExperimentConfig, prep: &Prepared, inverter: Option<&TrainedInverter>) -> Result<serde_json::Value> {
    Ok(json!({
        "schema": cfg.schema,
        "task": cfg.task,
        "attack": cfg.attack.name(),
        "objective": cfg.objective().map(|o| o.name()),
        "defense": cfg.defense,
        "batch_size": cfg.batch_size,
        "seeds": prep.seeds,
        "aux_size": cfg.data.aux_size,
        "beta": cfg.data.beta,
        "augmentation": cfg.data.augmentation,
        "train_examples": prep.train.len(),
        "eval_size": prep.eval.len(),
        "dataset_fingerprint": prep.pool_fingerprint,
        "model_fingerprint": fingerprint(&prep.model, &prep.w),
        "eval_fingerprint": data::fingerprint(&prep.eval),
        "inverter_holdout_loss": inverter.and_then(|i| i.manifest.holdout_loss),
        "config": serde_json::to_value(cfg)?,
    }))
}

/// Runs the attack and scores it without writing anything.
pub fn execute(cfg: &ExperimentConfig, inverter: Option<&TrainedInverter>) -> Result<ReconstructionReport> {
    let prep = prepare(cfg)?;
    info!(
        "{} attack on {} samples, {} training examples, defense {}",
        cfg.attack.name(),
        prep.eval.len(),
        prep.train.len(),
        cfg.defense
    );
    let (recons, trained) = match &cfg.attack {
        AttackConfig::Lti(_) => {
            let inv = match inverter {
                Some(i) => i.clone(),
                None => train_stage(cfg, &prep)?.0,
            };
            (attack_lti(cfg, &prep, &inv)?, Some(inv))
        }
        AttackConfig::OptBaseline(_) => (attack_opt(cfg, &prep)?, None),
    };
    let records = score(cfg, &prep, &recons)?;
    assemble_report(records, manifest(cfg, &prep, trained.as_ref())?)
}

/// Paths of the report files of a config.
pub fn report_paths(cfg: &ExperimentConfig) -> (PathBuf, PathBuf) {
    let dir = &cfg.output.dir;
    (
        dir.join(format!("{}.json", cfg.output.name)),
        dir.join(format!("{}.csv", cfg.output.name)),
    )
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

/// Writes files atomically as a group: on any failure none of them remain.
pub fn write_outputs(files: &[(PathBuf, String)]) -> Result<()> {
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| -> Result<()> {
        for (path, contents) in files {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let tmp = partial_path(path);
            written.push(tmp.clone());
            fs::write(&tmp, contents)?;
        }
        for (path, _) in files {
            fs::rename(partial_path(path), path)?;
            written.push(path.clone());
        }
        Ok(())
    })();
    if result.is_err() {
        for p in &written {
            let _ = fs::remove_file(p);
        }
    }
    result
}

/// Runs an experiment and writes its JSON and CSV reports.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReconstructionReport> {
    run_experiment_with(cfg, None)
}

/// As [`run_experiment`], reusing a trained inverter when given.
pub fn run_experiment_with(cfg: &ExperimentConfig, inverter: Option<&TrainedInverter>) -> Result<ReconstructionReport> {
    let report = execute(cfg, inverter)?;
    let (json_path, csv_path) = report_paths(cfg);
    write_outputs(&[(json_path, report.to_json()?), (csv_path, report.to_csv()?)])?;
    Ok(report)
}
