use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{IngestError, PeriodTaxonomy, UNKNOWN_PERIOD};

pub const CATALOG_HEADER: [&str; 4] = ["artifact_id", "image_path", "period", "genre"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub artifact_id: String,
    /// Relative to the catalog file's directory.
    pub image_path: String,
    pub period: String,
    pub genre: String,
}

/// Parsed catalog plus the directory that `image_path` entries are relative to.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    pub records: Vec<CatalogRecord>,
    pub base_dir: PathBuf,
    /// Rows whose period was not in the taxonomy and became [`UNKNOWN_PERIOD`].
    pub unknown_periods: usize,
}

impl Catalog {
    pub fn image_path(&self, record: &CatalogRecord) -> PathBuf {
        self.base_dir.join(&record.image_path)
    }

    pub fn periods(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.period.as_str()).collect()
    }
}

pub fn load_catalog(path: &Path, taxonomy: &PeriodTaxonomy) -> Result<Catalog, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let (records, unknown_periods) = parse_catalog(&text, taxonomy)?;
    Ok(Catalog {
        records,
        base_dir,
        unknown_periods,
    })
}

/// Parses catalog CSV text; returns the records and the unknown-period count.
pub fn parse_catalog(text: &str, taxonomy: &PeriodTaxonomy) -> Result<(Vec<CatalogRecord>, usize), IngestError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| IngestError::Catalog { line: 1, message: e.to_string() })?
        .clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != CATALOG_HEADER {
        return Err(IngestError::Catalog {
            line: 1,
            message: format!("expected header {}, got {:?}", CATALOG_HEADER.join(","), header),
        });
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut unknown = 0;
    for row in reader.records() {
        let row = row.map_err(|e| IngestError::Catalog {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let record = CatalogRecord {
            artifact_id: field(0),
            image_path: field(1),
            period: field(2),
            genre: field(3),
        };
        if record.artifact_id.is_empty() {
            return Err(IngestError::Catalog { line, message: "empty artifact_id".into() });
        }
        if record.image_path.is_empty() {
            return Err(IngestError::Catalog { line, message: "empty image_path".into() });
        }
        if !seen.insert(record.artifact_id.clone()) {
            return Err(IngestError::Catalog {
                line,
                message: format!("duplicate artifact_id {:?}", record.artifact_id),
            });
        }
        let mut record = record;
        if !taxonomy.contains(&record.period) {
            if record.period != UNKNOWN_PERIOD {
                unknown += 1;
            }
            record.period = UNKNOWN_PERIOD.to_string();
        }
        records.push(record);
    }
    Ok((records, unknown))
}

/// Writes records with the catalog header.
pub fn write_catalog(path: &Path, records: &[CatalogRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let io = |e: csv::Error| IngestError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(CATALOG_HEADER).map_err(io)?;
    for r in records {
        w.write_record([&r.artifact_id, &r.image_path, &r.period, &r.genre]).map_err(io)?;
    }
    w.flush().map_err(|e| IngestError::io(path, e))
}
