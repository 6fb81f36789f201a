//! A small layer engine: tensors, the layer set both models need, losses,
//! Adam, early stopping and finite-difference gradient checking.
//!
//! There is no autodiff graph. Every [`Layer`] has a hand-written backward
//! pass, and callers thread the [`Cache`] from `forward` into `backward`.

pub mod gradcheck;
mod layer;
pub mod loss;
mod ops;
mod optim;
mod sequential;
mod tensor;

pub use layer::{Cache, Layer, LayerSpec, Mode, BN_EPS, BN_MOMENTUM};
pub use loss::{kl_standard_normal, mse, softmax_rows, weighted_cross_entropy, ClassWeights, KlGrad};
pub use optim::{should_stop, Adam, LossWeights, ReconReduction, TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use sequential::Sequential;
pub use tensor::{Element, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("stale or mismatched cache: {0}")]
    StaleCache(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite values produced by {0}")]
    NonFinite(String),
}
