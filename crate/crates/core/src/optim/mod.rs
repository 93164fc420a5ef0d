//! Optimization-based baselines: find dummy data whose gradient matches the
//! observation, with the per-defense loss adaptations.

mod attack;
mod objective;

pub use attack::{
    nearest_token, run_opt_attack, run_text_opt_attack, DummyInit, LabelMode, OptAttackConfig, OptOutcome,
};
pub use objective::{match_loss, match_loss_and_grad, DummyGrad, DummySample, DummyTarget, MatchObjective};
