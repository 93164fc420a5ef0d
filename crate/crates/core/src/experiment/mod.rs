//! Configured, seeded experiment pipelines and ablation sweeps.
//!
//! Every random decision derives from the master seed through labeled
//! streams: `"data"` (pool generation, with `"augment"` beneath it),
//! `"split"`, `"init"` (weights), `"attack"` (with `"hash"`, `"lti"` and
//! `"batch:<i>"` beneath it) and `"noise:<sample>:<epoch>"` for Gaussian
//! defense noise. Seed fields inside the attack tables are overwritten by
//! these derived streams.

mod config;
mod run;
mod sweep;

pub use config::{
    desk_text_cls_model, desk_text_lm_model, desk_vision_model, AttackConfig, Augmentation, DataConfig, DataSource,
    ExperimentConfig, LtiConfig, OptConfig, OutputConfig, Task, SCHEMA, TEXT_METRICS, VISION_METRICS,
};
pub use run::{
    attack_lti, attack_opt, build_pool, execute, inverter_setup, prepare, report_paths, run_experiment,
    run_experiment_with, score, train_stage, write_outputs, Prepared, Seeds, WeightSnapshot,
};
pub use sweep::{run_sweep, SweepAxis, SweepReport, SweepRow};
