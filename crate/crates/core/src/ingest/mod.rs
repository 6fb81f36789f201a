//! Catalog, period taxonomy, image loading, dataset splits and the synthetic
//! tablet generator.

mod catalog;
mod image;
mod split;
mod synth;
mod taxonomy;

use std::path::{Path, PathBuf};

pub use catalog::{load_catalog, parse_catalog, write_catalog, Catalog, CatalogRecord, CATALOG_HEADER};
pub use image::{decode_png, encode_png, letterbox, load_image, luminance, resize, save_png, GrayImage};
pub use split::{split_dataset, DatasetSplit, DEFAULT_RATIOS};
pub use synth::{
    default_synth_classes, synth_generate, synth_generate_detailed, SynthClass, SynthConfig, SynthSample,
    TabletGeometry, ViewLayout, write_synth_dataset, ASPECT_RANGE, FRONT_EXTENT_FRAC, SYNTH_GENRES, VIEW_GAP,
};
pub use taxonomy::{Era, PeriodEntry, PeriodTaxonomy, UNKNOWN_PERIOD};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("catalog line {line}: {message}")]
    Catalog { line: usize, message: String },
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("image: {0}")]
    Image(String),
    #[error("split: {0}")]
    Split(String),
    #[error("synthetic config: {0}")]
    Synth(String),
}

impl IngestError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}
