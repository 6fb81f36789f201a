use std::path::Path;

use clayshape::ingest::{load_catalog, load_image, Catalog, GrayImage, PeriodTaxonomy};
use clayshape::latent::{mean_latent, GroupBy, MeanLatentRow, MeanLatentTable};
use clayshape::preprocess::MaskParams;
use clayshape::vae::Vae;

use crate::ServiceError;

/// Everything the endpoints read. Built once at startup and never mutated.
#[derive(Debug)]
pub struct ServiceState {
    pub model: Vae,
    pub class_labels: Vec<String>,
    pub catalog: Catalog,
    pub taxonomy: PeriodTaxonomy,
    pub mask_params: MaskParams,
    /// Catalog record indices whose image loaded.
    pub readable: Vec<usize>,
    pub by_period: MeanLatentTable,
    pub by_genre: MeanLatentTable,
    pub by_period_genre: MeanLatentTable,
}

impl ServiceState {
    /// Loads every catalog image, encodes it and averages the encoder means
    /// per period, per genre and per period/genre pair. Unreadable images are
    /// skipped.
    pub fn new(
        model: Vae,
        class_labels: Vec<String>,
        catalog: Catalog,
        taxonomy: PeriodTaxonomy,
    ) -> Result<Self, ServiceError> {
        let k = model.architecture().num_classes;
        let class_labels = if class_labels.len() == k {
            class_labels
        } else {
            (0..k).map(|c| format!("class_{c}")).collect()
        };
        let size = model.image_size();
        let mut images: Vec<GrayImage> = Vec::new();
        let mut readable = Vec::new();
        for (i, rec) in catalog.records.iter().enumerate() {
            match load_image(&catalog.image_path(rec), size) {
                Ok(img) => {
                    images.push(img);
                    readable.push(i);
                }
                Err(e) => eprintln!("skipping {}: {e}", rec.artifact_id),
            }
        }
        if images.is_empty() {
            return Err(ServiceError::Startup("no catalog image could be loaded".into()));
        }
        let idx: Vec<usize> = (0..images.len()).collect();
        let mus = model
            .encode_mu(&images, &idx)
            .map_err(|e| ServiceError::Startup(e.to_string()))?;
        let table = |by: GroupBy| {
            let rows: Vec<(String, &Vec<f64>)> = readable
                .iter()
                .zip(&mus)
                .map(|(&i, mu)| {
                    let r = &catalog.records[i];
                    (by.key(&r.period, &r.genre), mu)
                })
                .collect();
            mean_latent(&rows).map_err(|e| ServiceError::Startup(e.to_string()))
        };
        Ok(Self {
            by_period: table(GroupBy::Period)?,
            by_genre: table(GroupBy::Genre)?,
            by_period_genre: table(GroupBy::PeriodGenre)?,
            model,
            class_labels,
            catalog,
            taxonomy,
            mask_params: MaskParams::default(),
            readable,
        })
    }

    /// Reads a VAE checkpoint and a catalog CSV.
    pub fn load(checkpoint: &Path, catalog: &Path, taxonomy: PeriodTaxonomy) -> Result<Self, ServiceError> {
        let (model, meta) = Vae::load_checkpoint(checkpoint).map_err(|e| ServiceError::Startup(e.to_string()))?;
        let catalog = load_catalog(catalog, &taxonomy).map_err(|e| ServiceError::Startup(e.to_string()))?;
        Self::new(model, meta.class_labels, catalog, taxonomy)
    }

    /// Mean row for a period, a genre, or both.
    pub fn group(&self, period: Option<&str>, genre: Option<&str>) -> Result<&MeanLatentRow, GroupLookupError> {
        let (table, key) = match (period, genre) {
            (Some(p), Some(g)) => (&self.by_period_genre, GroupBy::PeriodGenre.key(p, g)),
            (Some(p), None) => (&self.by_period, p.to_string()),
            (None, Some(g)) => (&self.by_genre, g.to_string()),
            (None, None) => return Err(GroupLookupError::Missing),
        };
        table.row(&key).ok_or_else(|| GroupLookupError::Unknown {
            key,
            known: table.rows.iter().map(|r| r.group.clone()).collect(),
        })
    }
}

#[derive(Debug, PartialEq)]
pub enum GroupLookupError {
    Missing,
    Unknown { key: String, known: Vec<String> },
}
