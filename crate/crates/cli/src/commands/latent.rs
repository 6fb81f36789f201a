use std::path::Path;

use clayshape::classify::{ConfusionMatrix, OTHER_LABEL};
use clayshape::ingest::save_png;
use clayshape::latent::{
    confusion_dendrogram, decode_mean, entry_summary, hclust, interpolate, knob_adjust, mean_latent, GroupBy, Linkage,
    MeanLatentTable,
};
use clayshape::vae::Vae;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::{slug, taxonomy, Dataset};
use crate::manifest::{create_dir, write_json, Manifest};
use crate::{CliError, GroupArg, LatentArgs, LatentCommand};

fn group_by(g: GroupArg) -> GroupBy {
    match g {
        GroupArg::Period => GroupBy::Period,
        GroupArg::Genre => GroupBy::Genre,
        GroupArg::PeriodGenre => GroupBy::PeriodGenre,
    }
}

fn apply(cfg: &mut RunConfig, a: &LatentArgs) {
    if a.checkpoint.is_some() {
        cfg.checkpoint = a.checkpoint.clone();
    }
    if a.catalog.is_some() {
        cfg.catalog = a.catalog.clone();
    }
    if a.taxonomy.is_some() {
        cfg.taxonomy = a.taxonomy.clone();
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
}

struct Loaded {
    model: Vae,
    table: MeanLatentTable,
}

fn load(cfg: &RunConfig, by: GroupBy) -> Result<Loaded, CliError> {
    let (model, _) = Vae::load_checkpoint(cfg.require_checkpoint()?).map_err(CliError::data)?;
    let tax = taxonomy(cfg)?;
    let ds = Dataset::load(cfg.require_catalog()?, &tax, model.image_size())?;
    let mu = ds.encode_all(&model)?;
    let keyed: Vec<(String, Vec<f64>)> = ds
        .periods()
        .into_iter()
        .zip(ds.genres())
        .zip(mu)
        .map(|((p, g), z)| (by.key(p, g), z))
        .collect();
    let table = mean_latent(&keyed).map_err(CliError::data)?;
    Ok(Loaded { model, table })
}

/// `mean_<period>_<genre>.png`, with `all` standing in for the unused key.
fn mean_png_name(by: GroupBy, group: &str) -> String {
    let (p, g) = match by {
        GroupBy::Period => (group, "all"),
        GroupBy::Genre => ("all", group),
        GroupBy::PeriodGenre => group.split_once('|').unwrap_or((group, "all")),
    };
    format!("mean_{}_{}.png", slug(p), slug(g))
}

fn mean_of<'a>(table: &'a MeanLatentTable, group: &str) -> Result<&'a [f64], CliError> {
    table.row(group).map(|r| r.mean_mu.as_slice()).ok_or_else(|| {
        let known: Vec<&str> = table.rows.iter().map(|r| r.group.as_str()).collect();
        CliError::Usage(format!("unknown group {group:?}; known groups: {known:?}"))
    })
}

fn finish(cfg: &RunConfig, out: &Path, command: &str, args: Value, outputs: Vec<String>) -> Result<(), CliError> {
    let mut m = Manifest::new(command, args, cfg, None);
    m.outputs = outputs;
    m.write(out)?;
    Ok(())
}

pub fn run(command: LatentCommand, mut cfg: RunConfig) -> Result<(), CliError> {
    match command {
        LatentCommand::Means { common } => {
            apply(&mut cfg, &common);
            let out = cfg.require_out()?.to_path_buf();
            let by = group_by(common.group_by);
            let l = load(&cfg, by)?;
            create_dir(&out)?;
            let mut outputs = vec!["means.json".to_string()];
            for row in &l.table.rows {
                let img = decode_mean(&l.model, row).map_err(CliError::data)?;
                let name = mean_png_name(by, &row.group);
                save_png(&out.join(&name), &img).map_err(CliError::data)?;
                outputs.push(name);
            }
            write_json(&out.join("means.json"), &serde_json::to_value(&l.table).expect("plain data"))?;
            finish(&cfg, &out, "latent means", json!({ "group_by": common.group_by }), outputs)
        }
        LatentCommand::Interpolate { common, a, b, t, steps } => {
            apply(&mut cfg, &common);
            let out = cfg.require_out()?.to_path_buf();
            let ts: Vec<f64> = if t.is_empty() {
                if steps == 0 {
                    return Err(CliError::Usage("--steps must be at least 1".into()));
                }
                (0..=steps).map(|i| i as f64 / steps as f64).collect()
            } else {
                t
            };
            if let Some(bad) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                return Err(CliError::Usage(format!("--t values must lie in [0, 1], got {bad}")));
            }
            let l = load(&cfg, group_by(common.group_by))?;
            let za = mean_of(&l.table, &a)?;
            let zb = mean_of(&l.table, &b)?;
            create_dir(&out)?;
            let mut frames = Vec::new();
            let mut outputs = vec!["interpolation.json".to_string()];
            for (i, &t) in ts.iter().enumerate() {
                let (z, img) = interpolate(&l.model, za, zb, t).map_err(CliError::data)?;
                let name = format!("interp_{i:02}.png");
                save_png(&out.join(&name), &img).map_err(CliError::data)?;
                frames.push(json!({ "t": t, "z": z, "image": name }));
                outputs.push(name);
            }
            write_json(&out.join("interpolation.json"), &json!({ "a": a, "b": b, "frames": frames }))?;
            finish(&cfg, &out, "latent interpolate", json!({ "a": a, "b": b, "t": ts }), outputs)
        }
        LatentCommand::Knob {
            common,
            z,
            group,
            entry,
            value,
            min,
            max,
        } => {
            apply(&mut cfg, &common);
            let out = cfg.require_out()?.to_path_buf();
            if min > max {
                return Err(CliError::Usage(format!("--min {min} exceeds --max {max}")));
            }
            let (model, base) = if z.is_empty() {
                let Some(group) = &group else {
                    return Err(CliError::Usage("give either --z or --group".into()));
                };
                let l = load(&cfg, group_by(common.group_by))?;
                let base = mean_of(&l.table, group)?.to_vec();
                (l.model, base)
            } else {
                let (model, _) = Vae::load_checkpoint(cfg.require_checkpoint()?).map_err(CliError::data)?;
                (model, z)
            };
            let (edit, img) = knob_adjust(&model, &base, entry, value, (min, max)).map_err(|e| CliError::Usage(e.to_string()))?;
            create_dir(&out)?;
            save_png(&out.join("knob.png"), &img).map_err(CliError::data)?;
            let mut record = serde_json::to_value(&edit).expect("plain data");
            record["group"] = json!(group);
            record["image"] = json!("knob.png");
            write_json(&out.join("knob.json"), &record)?;
            finish(
                &cfg,
                &out,
                "latent knob",
                json!({ "entry": entry, "value": value, "range": [min, max], "group": group }),
                vec!["knob.json".into(), "knob.png".into()],
            )
        }
        LatentCommand::Cluster {
            common,
            linkage,
            k,
            confusion,
        } => {
            apply(&mut cfg, &common);
            let out = cfg.require_out()?.to_path_buf();
            let linkage: Linkage = linkage.parse().map_err(|e: clayshape::latent::LatentError| CliError::Usage(e.to_string()))?;
            let dendrogram = match &confusion {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    let cm: ConfusionMatrix = serde_json::from_value(v["confusion"].clone())
                        .map_err(|e| CliError::Data(format!("{}: no confusion matrix: {e}", path.display())))?;
                    if cm.labels.iter().any(|l| l == OTHER_LABEL) {
                        eprintln!("warning: the confusion matrix includes the merged {OTHER_LABEL:?} class");
                    }
                    confusion_dendrogram(&cm).map_err(CliError::data)?
                }
                None => {
                    let l = load(&cfg, group_by(common.group_by))?;
                    let points: Vec<(&str, &[f64])> =
                        l.table.rows.iter().map(|r| (r.group.as_str(), r.mean_mu.as_slice())).collect();
                    hclust(&points, linkage).map_err(CliError::data)?
                }
            };
            let mut v = dendrogram.to_json();
            if let Some(k) = k {
                let cut = dendrogram.cut_at(k).map_err(|e| CliError::Usage(e.to_string()))?;
                v["cut"] = json!({ "k": k, "assignment": cut });
            }
            create_dir(&out)?;
            write_json(&out.join("dendrogram.json"), &v)?;
            finish(
                &cfg,
                &out,
                "latent cluster",
                json!({ "linkage": linkage, "k": k, "confusion": confusion }),
                vec!["dendrogram.json".into()],
            )
        }
        LatentCommand::Entry { common, entry } => {
            apply(&mut cfg, &common);
            let out = cfg.require_out()?.to_path_buf();
            let l = load(&cfg, group_by(common.group_by))?;
            let tax = taxonomy(&cfg)?;
            let summary = |e: usize| entry_summary(&l.table, e, Some(&tax)).map_err(|e| CliError::Usage(e.to_string()));
            create_dir(&out)?;
            let name = match entry {
                Some(e) => {
                    write_json(&out.join("entry_summary.json"), &serde_json::to_value(summary(e)?).expect("plain data"))?;
                    "entry_summary.json"
                }
                None => {
                    let all = (0..l.table.latent_dim).map(summary).collect::<Result<Vec<_>, _>>()?;
                    write_json(&out.join("entry_summaries.json"), &serde_json::to_value(all).expect("plain data"))?;
                    "entry_summaries.json"
                }
            };
            finish(&cfg, &out, "latent entry", json!({ "entry": entry }), vec![name.into()])
        }
    }
}
