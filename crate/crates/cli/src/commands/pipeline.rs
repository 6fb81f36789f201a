use std::path::{Path, PathBuf};

use clayshape::eda::{kde, pearson_by_group, portrait_fraction, ratio_stats_by_group};
use clayshape::ingest::{load_catalog, load_image, write_synth_dataset, Era, SynthConfig};
use clayshape::preprocess::measure_ratio;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{slug, taxonomy};
use crate::manifest::{create_dir, write_json, Manifest};
use crate::{CliError, EdaGroup};

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.require_out()?;
    let s = &cfg.synth;
    if s.classes == 0 || s.classes > 4 {
        return Err(CliError::Usage(format!("--classes must be 1 to 4, got {}", s.classes)));
    }
    let config = SynthConfig::with_default_classes(s.classes, s.per_class, s.size, s.seed);
    create_dir(out)?;
    let records = write_synth_dataset(&config, out).map_err(CliError::data)?;
    let mut m = Manifest::new("synth", json!({ "synth_config": config }), cfg, Some(s.seed));
    m.outputs = vec!["catalog.csv".into(), format!("images/ ({} PNGs)", records.len())];
    m.write(out)?;
    eprintln!("wrote {} images to {}", records.len(), out.display());
    Ok(())
}

/// One row of the measurements CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRow {
    pub artifact_id: String,
    pub period: String,
    pub genre: String,
    pub pixel_count: usize,
    pub height_px: usize,
    pub width_px: usize,
    pub hw_ratio: f64,
}

fn measure_out(out: &Path) -> (PathBuf, PathBuf) {
    if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        (dir.to_path_buf(), out.to_path_buf())
    } else {
        (out.to_path_buf(), out.join("measures.csv"))
    }
}

pub fn measure(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.mask.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tax = taxonomy(cfg)?;
    let catalog = load_catalog(cfg.require_catalog()?, &tax).map_err(CliError::data)?;
    let (dir, csv_path) = measure_out(cfg.require_out()?);
    create_dir(&dir)?;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(8);
    let chunk = catalog.records.len().div_ceil(workers).max(1);
    let results: Vec<Result<MeasureRow, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = catalog
            .records
            .chunks(chunk)
            .map(|recs| {
                let catalog = &catalog;
                s.spawn(move || {
                    recs.iter()
                        .map(|rec| {
                            let img = load_image(&catalog.image_path(rec), cfg.measure_size).map_err(|e| e.to_string())?;
                            let m = measure_ratio(&img, &cfg.mask).map_err(|e| e.to_string())?;
                            Ok(MeasureRow {
                                artifact_id: rec.artifact_id.clone(),
                                period: rec.period.clone(),
                                genre: rec.genre.clone(),
                                pixel_count: m.pixel_count,
                                height_px: m.height_px,
                                width_px: m.width_px,
                                hw_ratio: m.hw_ratio,
                            })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut rows = Vec::new();
    for (rec, r) in catalog.records.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => eprintln!("warning: skipping {}: {e}", rec.artifact_id),
        }
    }
    rows.sort_by(|a, b| a.artifact_id.cmp(&b.artifact_id));
    let mut w = csv::Writer::from_path(&csv_path).map_err(CliError::data)?;
    for r in &rows {
        w.serialize(r).map_err(CliError::data)?;
    }
    w.flush().map_err(CliError::data)?;
    let skipped = catalog.records.len() - rows.len();
    let mut m = Manifest::new("measure", json!({}), cfg, None);
    m.outputs = vec![csv_path.file_name().unwrap().to_string_lossy().into_owned()];
    m.write(&dir)?;
    eprintln!("measured {} images, skipped {skipped}", rows.len());
    Ok(())
}

fn era_label(era: Era) -> &'static str {
    match era {
        Era::Millennium3 => "3rd millennium BCE",
        Era::Millennium2 => "2nd millennium BCE",
        Era::Millennium1 => "1st millennium BCE",
    }
}

pub fn eda(cfg: &RunConfig, measures: &Path, group_by: EdaGroup, grid_points: usize) -> Result<(), CliError> {
    let tax = taxonomy(cfg)?;
    let out = cfg.require_out()?;
    let mut reader = csv::Reader::from_path(measures).map_err(CliError::data)?;
    let rows: Vec<MeasureRow> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Data(format!("{}: {e}", measures.display())))?;
    if rows.is_empty() {
        return Err(CliError::Data(format!("{} has no rows", measures.display())));
    }
    let key = |r: &MeasureRow| match group_by {
        EdaGroup::Period => r.period.clone(),
        EdaGroup::Genre => r.genre.clone(),
        EdaGroup::Era => tax.era_of(&r.period).map_or("Unknown era", era_label).to_string(),
    };
    let order = match group_by {
        EdaGroup::Period => Some(&tax),
        _ => None,
    };
    create_dir(out)?;
    let mut outputs = vec!["ratio_stats.csv".to_string(), "pearson.csv".into(), "portrait.csv".into()];

    let ratios: Vec<(String, f64)> = rows.iter().map(|r| (key(r), r.hw_ratio)).collect();
    let era_rank = |g: &str| Era::ALL.iter().position(|e| era_label(*e) == g).unwrap_or(Era::ALL.len());
    let mut stats = ratio_stats_by_group(&ratios, order).map_err(CliError::data)?;
    if group_by == EdaGroup::Era {
        stats.sort_by_key(|s| era_rank(&s.group));
    }
    let mut w = csv::Writer::from_path(out.join("ratio_stats.csv")).map_err(CliError::data)?;
    for s in &stats {
        w.serialize(s).map_err(CliError::data)?;
    }
    w.flush().map_err(CliError::data)?;

    let hw: Vec<(String, f64, f64)> = rows
        .iter()
        .map(|r| (key(r), r.height_px as f64, r.width_px as f64))
        .collect();
    let mut w = csv::Writer::from_path(out.join("pearson.csv")).map_err(CliError::data)?;
    let mut correlations = pearson_by_group(&hw, order);
    if group_by == EdaGroup::Era {
        correlations.sort_by_key(|c| era_rank(&c.group));
    }
    for c in correlations {
        w.serialize(c).map_err(CliError::data)?;
    }
    w.flush().map_err(CliError::data)?;

    let mut w = csv::Writer::from_path(out.join("portrait.csv")).map_err(CliError::data)?;
    w.write_record(["group", "n", "portrait_fraction"]).map_err(CliError::data)?;
    for s in &stats {
        let values: Vec<f64> = ratios.iter().filter(|(g, _)| *g == s.group).map(|(_, r)| *r).collect();
        let frac = portrait_fraction(&values).map_err(CliError::data)?;
        w.write_record([s.group.clone(), s.n.to_string(), frac.to_string()])
            .map_err(CliError::data)?;
        match kde(&s.group, &values, grid_points) {
            Ok(series) => {
                let name = format!("kde_{}.json", slug(&s.group));
                write_json(&out.join(&name), &serde_json::to_value(series).expect("plain data"))?;
                outputs.push(name);
            }
            Err(e) => eprintln!("warning: no density for {}: {e}", s.group),
        }
    }
    w.flush().map_err(CliError::data)?;

    let mut m = Manifest::new(
        "eda",
        json!({ "measures": measures, "group_by": group_by, "grid_points": grid_points }),
        cfg,
        None,
    );
    m.outputs = outputs;
    m.write(out)?;
    Ok(())
}
