//! Latent-space analytics on a trained VAE: group means, decoding, knob edits
//! and hierarchical clustering.

mod hclust;
mod means;

pub use hclust::{
    confusion_dendrogram, confusion_distances, euclidean, hclust, hclust_distances, Dendrogram, Linkage,
};
pub use means::{
    decode_latent, decode_mean, entry_summary, interpolate, interpolate_latent, knob_adjust, knob_edit, mean_latent,
    EntrySummary, GroupBy, KnobEdit, MeanLatentRow, MeanLatentTable, DEFAULT_KNOB_RANGE,
};

use crate::ingest::IngestError;
use crate::nn::NnError;
use crate::vae::VaeError;

#[derive(Debug, thiserror::Error)]
pub enum LatentError {
    #[error("{0}")]
    Input(String),
    #[error("latent dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Image(#[from] IngestError),
}
