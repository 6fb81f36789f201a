//! Convolutional VAE with a 12-entry Gaussian bottleneck and a class head.

mod io;
mod model;
mod train;

pub use model::{
    reparameterize, sample_epsilon, Vae, VaeArchitecture, VaeLossBreakdown, VaeStep, DEFAULT_ENCODER_CHANNELS,
    DEFAULT_KERNEL, DEFAULT_LATENT_DIM,
};
pub use io::VAE_KIND;
pub use train::{images_to_tensor, train_vae, VaeEpoch, VaeHistory};

use crate::checkpoint::CheckpointError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("invalid VAE architecture: {0}")]
    Architecture(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
