use std::collections::BTreeMap;

use clayshape::checkpoint::{self, CheckpointMetadata};
use clayshape::classify::{cnn_build, cnn_train, evaluate_scores, gbstumps_grid_search, CnnModel, MetricsReport, CNN_KIND};
use clayshape::nn::softmax_rows;
use clayshape::vae::{images_to_tensor, train_vae, Vae, VaeArchitecture, VAE_KIND};
use serde_json::json;

use crate::config::RunConfig;
use crate::data::{taxonomy, Dataset};
use crate::manifest::{create_dir, write_json, Manifest};
use crate::{CliError, LatentClassifier};

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let tax = taxonomy(cfg)?;
    let ds = Dataset::load(cfg.require_catalog()?, &tax, cfg.image_size)?;
    if ds.class_labels.len() < 2 {
        return Err(CliError::Data(format!(
            "need at least 2 periods to train, found {:?}",
            ds.class_labels
        )));
    }
    Ok(ds)
}

pub fn train_cnn(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.cnn_train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = cfg.require_out()?;
    let ds = load_dataset(cfg)?;
    let split = ds.split(cfg.split_seed, cfg.stratify)?;
    let tc = &cfg.cnn_train;
    let mut model = cnn_build(cfg.image_size, ds.class_labels.len(), &cfg.cnn_channel_plan, tc.seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(out)?;
    let history = cnn_train(&mut model, &ds.images, &ds.labels, &split, tc, |e| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  val acc {:.3}",
            e.epoch, e.train_loss, e.validation_loss, e.validation_accuracy
        )
    })
    .map_err(CliError::data)?;
    let last = history.epochs.last().expect("at least one epoch");
    let metadata = CheckpointMetadata {
        epochs_run: history.epochs.len(),
        final_losses: BTreeMap::from([
            ("train".to_string(), last.train_loss),
            ("validation".to_string(), last.validation_loss),
        ]),
        seed: tc.seed,
        split_seed: Some(cfg.split_seed),
        class_labels: ds.class_labels.clone(),
    };
    model.save_checkpoint(&out.join("cnn.ckpt"), &metadata).map_err(CliError::data)?;
    write_json(&out.join("history.json"), &serde_json::to_value(&history).expect("plain data"))?;

    let probs = model.predict_proba(&ds.images, &split.test).map_err(CliError::data)?;
    let truth: Vec<usize> = split.test.iter().map(|&i| ds.labels[i]).collect();
    let report = score(&ds.class_labels, &truth, &probs, cfg.rare_class_min_count)?;
    let mut metrics = report.to_json();
    metrics["split"] = json!("test");
    metrics["classifier"] = json!(CNN_KIND);
    write_json(&out.join("metrics.json"), &metrics)?;
    eprintln!("test macro F1 {:.3}", report.macro_scores.f1);

    let mut m = Manifest::new("train-cnn", json!({}), cfg, Some(tc.seed));
    m.outputs = vec!["cnn.ckpt".into(), "history.json".into(), "metrics.json".into()];
    m.write(out)?;
    Ok(())
}

pub fn train_vae_cmd(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.vae_train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = cfg.require_out()?;
    let ds = load_dataset(cfg)?;
    let split = ds.split(cfg.split_seed, cfg.stratify)?;
    let tc = &cfg.vae_train;
    let arch = VaeArchitecture {
        image_size: cfg.image_size,
        latent_dim: cfg.vae.latent_dim,
        encoder_channels: cfg.vae.encoder_channels.clone(),
        kernel: cfg.vae.kernel,
        num_classes: ds.class_labels.len(),
    };
    let mut model = Vae::new(arch, tc.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(out)?;
    let history = train_vae(&mut model, &ds.images, &ds.labels, &split, tc, |e| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  val mse {:.4}",
            e.epoch, e.train.total, e.validation.total, e.validation.recon_mse
        )
    })
    .map_err(CliError::data)?;
    let last = history.epochs.last().expect("at least one epoch");
    let metadata = CheckpointMetadata {
        epochs_run: history.epochs.len(),
        final_losses: BTreeMap::from([
            ("train_total".to_string(), last.train.total),
            ("validation_total".to_string(), last.validation.total),
            ("validation_recon_mse".to_string(), last.validation.recon_mse),
        ]),
        seed: tc.seed,
        split_seed: Some(cfg.split_seed),
        class_labels: ds.class_labels.clone(),
    };
    model.save_checkpoint(&out.join("vae.ckpt"), &metadata).map_err(CliError::data)?;
    write_json(&out.join("history.json"), &serde_json::to_value(&history).expect("plain data"))?;
    let mut m = Manifest::new("train-vae", json!({}), cfg, Some(tc.seed));
    m.outputs = vec!["vae.ckpt".into(), "history.json".into()];
    m.write(out)?;
    Ok(())
}


/// Maps dataset labels onto the checkpoint's class list by name.
fn remap(ds: &Dataset, class_labels: &[String]) -> Result<Vec<usize>, CliError> {
    ds.labels
        .iter()
        .map(|&l| {
            let name = &ds.class_labels[l];
            class_labels.iter().position(|c| c == name).ok_or_else(|| {
                CliError::Data(format!("period {name:?} is not one of the checkpoint classes {class_labels:?}"))
            })
        })
        .collect()
}

pub fn eval(
    cfg: &RunConfig,
    split_name: &str,
    classifier: LatentClassifier,
    split_seed_flag: Option<u64>,
) -> Result<(), CliError> {
    let out = cfg.require_out()?;
    let raw = checkpoint::read_file(cfg.require_checkpoint()?).map_err(CliError::data)?;
    let kind = raw.kind.clone();
    let split_seed = split_seed_flag.or(raw.metadata.split_seed).unwrap_or(cfg.split_seed);
    let tax = taxonomy(cfg)?;
    let ds = Dataset::load(cfg.require_catalog()?, &tax, cfg.image_size)?;
    let split = ds.split(split_seed, cfg.stratify)?;
    let idx = split
        .part(split_name)
        .ok_or_else(|| CliError::Usage(format!("--split must be train, validation or test, got {split_name:?}")))?
        .to_vec();
    if idx.is_empty() {
        return Err(CliError::Data(format!("the {split_name} split is empty")));
    }

    let (class_labels, probs, used) = match kind.as_str() {
        CNN_KIND => {
            let (model, meta) = CnnModel::from_raw(raw).map_err(CliError::data)?;
            check_size(model.architecture().image_size, cfg.image_size)?;
            let probs = model.predict_proba(&ds.images, &idx).map_err(CliError::data)?;
            (meta.class_labels, probs, CNN_KIND)
        }
        VAE_KIND => {
            let (model, meta) = Vae::from_raw(raw).map_err(CliError::data)?;
            check_size(model.image_size(), cfg.image_size)?;
            let labels = remap(&ds, &meta.class_labels)?;
            let k = meta.class_labels.len();
            let probs = match classifier {
                LatentClassifier::Head => {
                    let mut probs = Vec::with_capacity(idx.len());
                    for chunk in idx.chunks(64) {
                        let x = images_to_tensor(&ds.images, chunk).map_err(CliError::data)?;
                        let (mu, _) = model.encode(&x).map_err(CliError::data)?;
                        probs.extend(softmax_rows(&model.classify(&mu).map_err(CliError::data)?));
                    }
                    probs
                }
                LatentClassifier::Gbstumps => {
                    let fit = |part: &[usize]| -> Result<(Vec<Vec<f64>>, Vec<usize>), CliError> {
                        let x = model.encode_mu(&ds.images, part).map_err(CliError::data)?;
                        Ok((x, part.iter().map(|&i| labels[i]).collect()))
                    };
                    let (tx, ty) = fit(&split.train)?;
                    let (vx, vy) = fit(&split.validation)?;
                    let (stumps, grid) = gbstumps_grid_search((&tx, &ty), (&vx, &vy), k).map_err(CliError::data)?;
                    for c in &grid {
                        eprintln!(
                            "rounds {:>3}  lr {:.2}  val macro F1 {:.3}",
                            c.rounds, c.learning_rate, c.validation_macro_f1
                        );
                    }
                    let x = model.encode_mu(&ds.images, &idx).map_err(CliError::data)?;
                    x.iter().map(|r| stumps.predict_proba(r)).collect()
                }
            };
            let used = match classifier {
                LatentClassifier::Head => "vae-head",
                LatentClassifier::Gbstumps => "gbstumps",
            };
            (meta.class_labels, probs, used)
        }
        other => return Err(CliError::Data(format!("unsupported checkpoint kind {other:?}"))),
    };
    let labels = remap(&ds, &class_labels)?;
    let truth: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let report = score(&class_labels, &truth, &probs, cfg.rare_class_min_count)?;
    create_dir(out)?;
    let mut metrics = report.to_json();
    metrics["split"] = json!(split_name);
    metrics["classifier"] = json!(used);
    write_json(&out.join("metrics.json"), &metrics)?;
    eprintln!("{split_name} macro F1 {:.3}", report.macro_scores.f1);
    let mut m = Manifest::new(
        "eval",
        json!({ "split": split_name, "classifier": used, "split_seed": split_seed }),
        cfg,
        Some(split_seed),
    );
    m.outputs = vec!["metrics.json".into()];
    m.write(out)?;
    Ok(())
}

/// Scores with rare-class folding, unless folding would leave fewer than
/// two classes; then every class is reported on its own and flagged.
fn score(class_labels: &[String], truth: &[usize], probs: &[Vec<f64>], min_count: usize) -> Result<MetricsReport, CliError> {
    let mut counts = vec![0; class_labels.len()];
    truth.iter().for_each(|&t| counts[t] += 1);
    if counts.iter().filter(|&&c| c >= min_count).count() >= 2 {
        return evaluate_scores(class_labels, truth, probs, min_count).map_err(CliError::data);
    }
    eprintln!("warning: fewer than two classes have {min_count} samples; rare classes are not merged");
    let mut report = evaluate_scores(class_labels, truth, probs, 0).map_err(CliError::data)?;
    report
        .flags
        .push(format!("fewer than two classes have {min_count} samples; rare classes were not merged"));
    Ok(report)
}

fn check_size(model: usize, requested: usize) -> Result<(), CliError> {
    if model != requested {
        return Err(CliError::Usage(format!(
            "checkpoint expects {model}px images but --size is {requested}"
        )));
    }
    Ok(())
}
