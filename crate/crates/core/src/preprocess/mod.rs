//! Silhouette masks and largest-component measurements.

mod components;
mod mask;

pub use components::{label_components, largest_component, measure_ratio, ComponentMeasure};
pub use mask::{binarize, gaussian_blur, gaussian_kernel, mask_pipeline, BinaryMask, MaskParams};

use crate::ingest::IngestError;

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("invalid mask parameters: {0}")]
    Params(String),
    #[error("no component: the mask is empty")]
    NoComponent,
    #[error(transparent)]
    Image(#[from] IngestError),
}
