//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federated::Defense;
use crate::lti::{TrainConfig, DEFAULT_HIDDEN};
use crate::model::{EmbeddingSpec, TargetModelSpec};
use crate::optim::{MatchObjective, OptAttackConfig};

/// Schema id every configuration must declare.
pub const SCHEMA: &str = "gradleak.experiment/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    VisionCls,
    TextCls,
    TextLm,
}

impl Task {
    pub fn is_text(self) -> bool {
        !matches!(self, Task::VisionCls)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Augmentation {
    #[default]
    None,
    DctGaussian,
    ImageGaussian,
    Unigram,
}

/// Where the data pool comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source", deny_unknown_fields)]
pub enum DataSource {
    SyntheticVision {
        /// Total classes; the upper half is out-of-distribution for beta splits.
        classes: usize,
        channels: usize,
        height: usize,
        width: usize,
        pool_size: usize,
    },
    SyntheticText {
        vocab: usize,
        seq_len: usize,
        pool_size: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub pool: DataSource,
    pub eval_size: usize,
    pub aux_size: usize,
    /// In-distribution share of the auxiliary set (vision only).
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub augmentation: Augmentation,
    /// Synthetic samples added by the augmentation; defaults to `aux_size`.
    #[serde(default)]
    pub augment_size: Option<usize>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LtiConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// `k / m`; absent means no hashing.
    #[serde(default)]
    pub hash_ratio: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_hidden() -> Vec<usize> {
    vec![DEFAULT_HIDDEN]
}

impl Default for LtiConfig {
    fn default() -> Self {
        LtiConfig {
            hidden: default_hidden(),
            hash_ratio: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    /// Defaults to the defense-specific adaptation.
    #[serde(default)]
    pub objective: Option<MatchObjective>,
    #[serde(default)]
    pub optimizer: OptAttackConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum AttackConfig {
    Lti(LtiConfig),
    OptBaseline(OptConfig),
}

impl AttackConfig {
    pub fn name(&self) -> &'static str {
        match self {
            AttackConfig::Lti(_) => "lti",
            AttackConfig::OptBaseline(_) => "opt-baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default = "default_report_name")]
    pub name: String,
}

fn default_report_name() -> String {
    "report".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub task: Task,
    pub seed: u64,
    #[serde(default = "one_usize")]
    pub batch_size: usize,
    pub model: TargetModelSpec,
    /// Weight snapshot written by `snapshot-model`; random init from the
    /// `"init"` stream when absent.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default = "no_defense")]
    pub defense: Defense,
    pub attack: AttackConfig,
    /// Metric names to report; all metrics of the task when empty.
    #[serde(default)]
    pub metrics: Vec<String>,
    pub output: OutputConfig,
}

fn one_usize() -> usize {
    1
}

fn no_defense() -> Defense {
    Defense::None
}

pub const VISION_METRICS: &[&str] = &["mse", "psnr", "ssim"];
pub const TEXT_METRICS: &[&str] = &["accuracy", "rouge1", "rouge2", "rougeL"];

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("bytes {}..{}", s.start, s.end)).unwrap_or_default();
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative paths inside a config are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::File { path } = &mut cfg.data.pool {
            fix(path);
        }
        if let Some(w) = &mut cfg.weights {
            fix(w);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn metric_names(&self) -> Vec<String> {
        if !self.metrics.is_empty() {
            return self.metrics.clone();
        }
        let all = if self.task.is_text() { TEXT_METRICS } else { VISION_METRICS };
        all.iter().map(|s| s.to_string()).collect()
    }

    /// Field-level checks that do not need the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.schema != SCHEMA {
            return bad("schema", format!("expected \"{SCHEMA}\", got \"{}\"", self.schema));
        }
        if self.batch_size == 0 || self.batch_size > crate::lti::MAX_PERM_BATCH {
            return bad(
                "batch_size",
                format!("must lie in 1..={}, got {}", crate::lti::MAX_PERM_BATCH, self.batch_size),
            );
        }
        self.model.validate().map_err(|e| Error::config("model", e.to_string()))?;
        if self.model.kind.is_text() != self.task.is_text() {
            return bad("model.kind", format!("{:?} does not fit task {:?}", self.model.kind, self.task));
        }
        if (self.task == Task::TextLm) != (self.model.kind == crate::model::ModelKind::EmbedLm) {
            return bad("model.kind", "text-lm needs embed-lm and vice versa".into());
        }
        self.defense.validate().map_err(|e| Error::config("defense", e.to_string()))?;

        let d = &self.data;
        if d.eval_size == 0 || d.eval_size % self.batch_size != 0 {
            return bad("data.eval_size", format!("must be a positive multiple of batch_size ({})", self.batch_size));
        }
        if d.aux_size == 0 && matches!(self.attack, AttackConfig::Lti(_)) {
            return bad("data.aux_size", "the learned attack needs auxiliary data".into());
        }
        if !(0.0..=1.0).contains(&d.beta) {
            return bad("data.beta", format!("must lie in [0, 1], got {}", d.beta));
        }
        if self.task.is_text() && d.beta != 1.0 {
            return bad("data.beta", "beta mixing is defined for vision tasks only".into());
        }
        match (d.augmentation, self.task.is_text()) {
            (Augmentation::DctGaussian | Augmentation::ImageGaussian, true) => {
                return bad("data.augmentation", "Gaussian augmentations apply to images".into())
            }
            (Augmentation::Unigram, false) => {
                return bad("data.augmentation", "unigram augmentation applies to text".into())
            }
            _ => {}
        }
        if d.augment_size == Some(0) {
            return bad("data.augment_size", "must be positive".into());
        }
        let total = d.eval_size + d.aux_size;
        match &d.pool {
            DataSource::SyntheticVision { classes, channels, height, width, pool_size } => {
                if self.task.is_text() {
                    return bad("data.pool", "synthetic-vision data for a text task".into());
                }
                if *classes < 2 || classes % 2 != 0 {
                    return bad("data.pool.classes", format!("must be even and at least 2, got {classes}"));
                }
                if classes / 2 != self.model.num_classes {
                    return bad(
                        "data.pool.classes",
                        format!("half of {classes} must equal model.num_classes ({})", self.model.num_classes),
                    );
                }
                let shape = crate::model::InputShape::Image {
                    channels: *channels,
                    height: *height,
                    width: *width,
                };
                if shape != self.model.input {
                    return bad("data", "image shape differs from model.input".into());
                }
                if total > *pool_size {
                    return bad(
                        "data.aux_size",
                        format!("eval_size + aux_size = {total} exceeds pool_size {pool_size}"),
                    );
                }
            }
            DataSource::SyntheticText { vocab, seq_len, pool_size } => {
                if !self.task.is_text() {
                    return bad("data.pool", "synthetic-text data for a vision task".into());
                }
                if self.model.input != (crate::model::InputShape::Tokens { seq_len: *seq_len, vocab: *vocab }) {
                    return bad("data", "sequence length or vocabulary differs from model.input".into());
                }
                if total > *pool_size {
                    return bad(
                        "data.aux_size",
                        format!("eval_size + aux_size = {total} exceeds pool_size {pool_size}"),
                    );
                }
            }
            DataSource::File { .. } => {}
        }

        let allowed = if self.task.is_text() { TEXT_METRICS } else { VISION_METRICS };
        if let Some(m) = self.metrics.iter().find(|m| !allowed.contains(&m.as_str())) {
            return bad("metrics", format!("unknown metric \"{m}\" for this task; choose from {allowed:?}"));
        }

        match &self.attack {
            AttackConfig::Lti(l) => {
                l.train.validate().map_err(|e| match e {
                    Error::Config { field, message } => Error::config(format!("attack.train.{field}"), message),
                    other => other,
                })?;
                if l.hidden.contains(&0) {
                    return bad("attack.hidden", "layer widths must be positive".into());
                }
                if let Some(r) = l.hash_ratio {
                    if !(r > 0.0 && r <= 1.0) {
                        return bad("attack.hash_ratio", format!("must lie in (0, 1], got {r}"));
                    }
                }
            }
            AttackConfig::OptBaseline(o) => {
                o.optimizer.validate().map_err(|e| match e {
                    Error::Config { field, message } => Error::config(format!("attack.optimizer.{field}"), message),
                    other => other,
                })?;
                if let Some(obj) = &o.objective {
                    obj.check(&self.defense, self.batch_size)
                        .map_err(|e| Error::config("attack.objective", e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    /// Objective the optimization attack will use.
    pub fn objective(&self) -> Option<MatchObjective> {
        match &self.attack {
            AttackConfig::OptBaseline(o) => Some(o.objective.unwrap_or_else(|| {
                if self.task.is_text() {
                    MatchObjective::tag_for_defense(&self.defense, self.batch_size, 1.0)
                } else {
                    MatchObjective::for_defense(&self.defense, self.batch_size)
                }
            })),
            AttackConfig::Lti(_) => None,
        }
    }
}

/// Default desk-scale vision model: conv-lite on 8×8×3 images, 4 classes.
pub fn desk_vision_model() -> TargetModelSpec {
    TargetModelSpec::conv_lite(8, 3, 8, 8, 4)
}

/// Default desk-scale language model: V = 64, L = 8.
pub fn desk_text_lm_model() -> TargetModelSpec {
    TargetModelSpec::embed_lm(vec![32], 8, 64, EmbeddingSpec { dim: 8, seed: 3 })
}

/// Default desk-scale text classifier: V = 64, L = 8, 4 classes.
pub fn desk_text_cls_model() -> TargetModelSpec {
    TargetModelSpec::embed_classifier(vec![32], 8, 64, EmbeddingSpec { dim: 8, seed: 3 }, 4)
}
