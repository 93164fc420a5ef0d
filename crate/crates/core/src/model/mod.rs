//! Target-model zoo with exact per-sample gradients.
//!
//! Four desk-scale architectures stand in for the federated model `f_w`.
//! All passes run in 64-bit floating point; gradients come from hand-written
//! backpropagation and are checked against central finite differences.

mod grad;
pub(crate) mod net;
pub mod scalar;
mod spec;

pub use grad::{
    central_difference, finite_diff_grad, forward, init_params, loss, loss_and_grad, max_relative_error,
};
pub use scalar::{Dual, Scalar};
pub use spec::{
    EmbeddingSpec, Example, GradientVector, Input, InputShape, ModelKind, ParamVector, TargetModel,
    TargetModelSpec, CONV_KERNEL, CONV_PADDING,
};

/// SHA-256 fingerprint (first 16 hex chars) of a model spec and its weights.
pub fn fingerprint(model: &TargetModel, w: &[f64]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(model.spec()).unwrap_or_default());
    for v in w {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}
