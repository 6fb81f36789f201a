use std::path::Path;

use clayshape::ingest::{load_catalog, load_image, split_dataset, Catalog, DatasetSplit, GrayImage, PeriodTaxonomy, DEFAULT_RATIOS};
use clayshape::vae::Vae;

use crate::config::RunConfig;
use crate::CliError;

pub fn taxonomy(cfg: &RunConfig) -> Result<PeriodTaxonomy, CliError> {
    match &cfg.taxonomy {
        None => Ok(PeriodTaxonomy::builtin()),
        Some(p) => PeriodTaxonomy::from_json_file(p).map_err(CliError::data),
    }
}

/// Catalog images loaded at one size, with class indices by period.
pub struct Dataset {
    pub catalog: Catalog,
    /// Catalog record index of each loaded image.
    pub records: Vec<usize>,
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
    /// Periods present, oldest first.
    pub class_labels: Vec<String>,
}

impl Dataset {
    pub fn load(catalog_path: &Path, taxonomy: &PeriodTaxonomy, size: usize) -> Result<Self, CliError> {
        let catalog = load_catalog(catalog_path, taxonomy).map_err(CliError::data)?;
        let mut records = Vec::new();
        let mut images = Vec::new();
        for (i, rec) in catalog.records.iter().enumerate() {
            match load_image(&catalog.image_path(rec), size) {
                Ok(img) => {
                    records.push(i);
                    images.push(img);
                }
                Err(e) => eprintln!("warning: skipping {}: {e}", rec.artifact_id),
            }
        }
        if images.is_empty() {
            return Err(CliError::Data("no catalog image could be loaded".into()));
        }
        let mut class_labels: Vec<String> = records.iter().map(|&i| catalog.records[i].period.clone()).collect();
        class_labels.sort_by(|a, b| taxonomy.order_of(a).cmp(&taxonomy.order_of(b)).then(a.cmp(b)));
        class_labels.dedup();
        let labels = records
            .iter()
            .map(|&i| class_labels.iter().position(|c| *c == catalog.records[i].period).unwrap())
            .collect();
        Ok(Self {
            catalog,
            records,
            images,
            labels,
            class_labels,
        })
    }

    pub fn periods(&self) -> Vec<&str> {
        self.records.iter().map(|&i| self.catalog.records[i].period.as_str()).collect()
    }

    pub fn genres(&self) -> Vec<&str> {
        self.records.iter().map(|&i| self.catalog.records[i].genre.as_str()).collect()
    }

    pub fn split(&self, seed: u64, stratify: bool) -> Result<DatasetSplit, CliError> {
        let periods = self.periods();
        let strata = stratify.then_some(periods.as_slice());
        split_dataset(self.images.len(), strata, DEFAULT_RATIOS, seed).map_err(CliError::data)
    }

    pub fn encode_all(&self, model: &Vae) -> Result<Vec<Vec<f64>>, CliError> {
        let idx: Vec<usize> = (0..self.images.len()).collect();
        model.encode_mu(&self.images, &idx).map_err(CliError::data)
    }
}

/// File-name-safe form of a group label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}
