//! Learning to invert: an MLP trained on auxiliary data maps defended,
//! aggregated gradients back to the batch that produced them.

mod inverter;
mod io;
mod perm;
mod train;

pub use inverter::{InverterSpec, OutputHead, DEFAULT_HIDDEN};
pub use io::{decode_inverter, encode_inverter, load_inverter, save_inverter, INVERTER_MAGIC, INVERTER_VERSION};
pub use perm::{best_assignment, perm_invariant_loss, SingleLoss, TargetRef, MAX_PERM_BATCH};
pub use train::{
    check_head, invert, make_training_example, train_inverter, InputScaling, TrainConfig, INPUT_CLAMP, TrainedInverter,
    TrainingLog, TrainingManifest,
};
