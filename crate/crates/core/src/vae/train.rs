use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_epsilon, Vae, VaeError, VaeLossBreakdown};
use crate::ingest::{DatasetSplit, GrayImage};
use crate::nn::{should_stop, Adam, ClassWeights, Tensor, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    /// Sample-weighted mean over the epoch's training batches.
    pub train: VaeLossBreakdown,
    /// Validation loss with `z = mu`.
    pub validation: VaeLossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeHistory {
    pub epochs: Vec<VaeEpoch>,
    pub stopped_early: bool,
    pub class_weights: Vec<f64>,
}

/// Stacks the selected images into a `[n, 1, H, W]` tensor.
pub fn images_to_tensor(images: &[GrayImage], indices: &[usize]) -> Result<Tensor, VaeError> {
    let first = indices
        .first()
        .map(|&i| &images[i])
        .ok_or_else(|| VaeError::Data("no images selected".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(indices.len() * h * w);
    for &i in indices {
        let img = images
            .get(i)
            .ok_or_else(|| VaeError::Data(format!("image index {i} out of range")))?;
        if (img.height(), img.width()) != (h, w) {
            return Err(VaeError::Data(format!(
                "image {i} is {}x{}, expected {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        data.extend_from_slice(img.pixels());
    }
    Ok(Tensor::new(vec![indices.len(), 1, h, w], data)?)
}

fn accumulate(acc: &mut [f64; 4], loss: &VaeLossBreakdown, n: usize) {
    let n = n as f64;
    acc[0] += loss.total * n;
    acc[1] += loss.recon_mse * n;
    acc[2] += loss.kl * n;
    acc[3] += loss.weighted_ce * n;
}

fn mean_breakdown(acc: [f64; 4], n: usize, weights: crate::nn::LossWeights, pixels: usize) -> VaeLossBreakdown {
    let n = n.max(1) as f64;
    VaeLossBreakdown::combine(acc[1] / n, acc[2] / n, acc[3] / n, weights, pixels)
}

fn class_counts(labels: &[usize], indices: &[usize], k: usize) -> Result<Vec<usize>, VaeError> {
    let mut counts = vec![0; k];
    for &i in indices {
        let l = labels[i];
        if l >= k {
            return Err(VaeError::Data(format!("label {l} out of range for {k} classes")));
        }
        counts[l] += 1;
    }
    Ok(counts)
}

/// Adam training with class weights from the training-split counts and early
/// stopping on the validation total. Deterministic for a fixed `cfg.seed`.
pub fn train_vae(
    model: &mut Vae,
    images: &[GrayImage],
    labels: &[usize],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&VaeEpoch),
) -> Result<VaeHistory, VaeError> {
    cfg.validate()?;
    if images.len() != labels.len() {
        return Err(VaeError::Data(format!("{} images but {} labels", images.len(), labels.len())));
    }
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(VaeError::Data("train and validation partitions must be non-empty".into()));
    }
    let k = model.architecture().num_classes;
    let counts = class_counts(labels, &split.train, k)?;
    class_counts(labels, &split.validation, k)?;
    let class_weights = ClassWeights::from_counts(&counts)?;
    let weights = cfg.loss_weights;
    let latent = model.latent_dim();

    let val_images = images_to_tensor(images, &split.validation)?;
    let val_labels: Vec<usize> = split.validation.iter().map(|&i| labels[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new();
    let mut order = split.train.clone();
    let mut history = VaeHistory {
        epochs: Vec::new(),
        stopped_early: false,
        class_weights: class_weights.as_slice().to_vec(),
    };
    let mut val_totals = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0; 4];
        for batch in order.chunks(cfg.batch_size) {
            let x = images_to_tensor(images, batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let eps = sample_epsilon(batch.len(), latent, &mut rng);
            let step = model.loss_and_grads(&x, &y, &class_weights, weights, &eps)?;
            accumulate(&mut acc, &step.loss, batch.len());
            adam.step(&mut model.params_mut(), &step.grads, cfg.learning_rate)?;
        }
        let record = VaeEpoch {
            epoch,
            train: mean_breakdown(acc, order.len(), weights, model.image_size().pow(2)),
            validation: model.evaluate(&val_images, &val_labels, &class_weights, weights, cfg.batch_size)?,
        };
        on_epoch(&record);
        val_totals.push(record.validation.total);
        history.epochs.push(record);
        if epoch < cfg.max_epochs && should_stop(&val_totals, cfg.early_stop_patience) {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}

impl Vae {
    /// Encoder means of the selected images as f64 rows, in chunks of 64.
    pub fn encode_mu(&self, images: &[GrayImage], indices: &[usize]) -> Result<Vec<Vec<f64>>, VaeError> {
        let d = self.latent_dim();
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(64) {
            let (mu, _) = self.encode(&images_to_tensor(images, chunk)?)?;
            out.extend(mu.data().chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()));
        }
        Ok(out)
    }

    /// Loss on a dataset with `z = mu`, processed in chunks of `chunk` images.
    pub fn evaluate(
        &self,
        images: &Tensor,
        labels: &[usize],
        class_weights: &ClassWeights,
        weights: crate::nn::LossWeights,
        chunk: usize,
    ) -> Result<VaeLossBreakdown, VaeError> {
        let n = images.batch();
        if labels.len() != n {
            return Err(VaeError::Shape(format!("{} labels for {n} images", labels.len())));
        }
        let item = images.item_len();
        let mut acc = [0.0; 4];
        for start in (0..n).step_by(chunk.max(1)) {
            let end = (start + chunk.max(1)).min(n);
            let mut shape = images.shape().to_vec();
            shape[0] = end - start;
            let x = Tensor::new(shape, images.data()[start * item..end * item].to_vec())?;
            let (mu, logvar) = self.encode(&x)?;
            let recon = self.decode(&mu)?;
            let (mse, _) = crate::nn::mse(&recon, &x)?;
            let (kl, _) = crate::nn::kl_standard_normal(&mu, &logvar)?;
            let (ce, _) = crate::nn::weighted_cross_entropy(&self.classify(&mu)?, &labels[start..end], class_weights)?;
            accumulate(&mut acc, &VaeLossBreakdown::combine(mse, kl, ce, weights, item), end - start);
        }
        Ok(mean_breakdown(acc, n, weights, item))
    }
}
