use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::checkpoint::{self, CheckpointError, CheckpointMetadata};
use crate::ingest::{DatasetSplit, GrayImage};
use crate::nn::{self, should_stop, softmax_rows, Adam, ClassWeights, LayerSpec, Mode, Sequential, Tensor, TrainConfig};
use crate::vae::images_to_tensor;

pub const DEFAULT_CHANNEL_PLAN: [usize; 4] = [16, 32, 64, 128];
pub const CNN_HIDDEN: usize = 64;
pub const CNN_DROPOUT: f32 = 0.5;
pub const CNN_KIND: &str = "cnn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnArchitecture {
    pub image_size: usize,
    pub num_classes: usize,
    pub channel_plan: Vec<usize>,
}

impl CnnArchitecture {
    fn specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = 1;
        for &ch in &self.channel_plan {
            specs.extend([
                LayerSpec::Conv2d {
                    in_channels: prev,
                    out_channels: ch,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::BatchNorm2d { channels: ch },
                LayerSpec::ReLU,
                LayerSpec::MaxPool2d { size: 2 },
            ]);
            prev = ch;
        }
        let side = self.image_size >> self.channel_plan.len();
        specs.extend([
            LayerSpec::Dense {
                in_features: prev * side * side,
                out_features: CNN_HIDDEN,
            },
            LayerSpec::ReLU,
            LayerSpec::Dropout { p: CNN_DROPOUT },
            LayerSpec::Dense {
                in_features: CNN_HIDDEN,
                out_features: self.num_classes,
            },
        ]);
        specs
    }
}

/// Four conv / batch-norm / ReLU / 2x2 max-pool stages, then
/// dense 64 / ReLU / dropout 0.5 / dense K.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    arch: CnnArchitecture,
    pub net: Sequential,
}

pub fn cnn_build(image_size: usize, num_classes: usize, channel_plan: &[usize], seed: u64) -> Result<CnnModel, ClassifyError> {
    let stages = channel_plan.len();
    if stages != 4 {
        return Err(ClassifyError::Input(format!("channel plan needs 4 entries, got {stages}")));
    }
    if image_size == 0 || image_size % 16 != 0 {
        return Err(ClassifyError::Input(format!("image size {image_size} is not divisible by 16")));
    }
    if num_classes < 2 || channel_plan.contains(&0) {
        return Err(ClassifyError::Input("need >= 2 classes and non-zero channel widths".into()));
    }
    let arch = CnnArchitecture {
        image_size,
        num_classes,
        channel_plan: channel_plan.to_vec(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Sequential::new(arch.specs(), &mut rng)?;
    Ok(CnnModel { arch, net })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnHistory {
    pub epochs: Vec<CnnEpoch>,
    pub stopped_early: bool,
}

impl CnnModel {
    pub fn architecture(&self) -> &CnnArchitecture {
        &self.arch
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    /// Eval-mode logits `[B, K]` for images `[B, 1, S, S]`.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor, ClassifyError> {
        let s = self.arch.image_size;
        if images.shape()[1..] != [1, s, s] {
            return Err(ClassifyError::Input(format!(
                "expected images [B, 1, {s}, {s}], got {:?}",
                images.shape()
            )));
        }
        Ok(self.net.infer(images)?)
    }

    /// Class probabilities for each image, processed in chunks.
    pub fn predict_proba(&self, images: &[GrayImage], indices: &[usize]) -> Result<Vec<Vec<f64>>, ClassifyError> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(64) {
            let x = images_to_tensor(images, chunk).map_err(|e| ClassifyError::Input(e.to_string()))?;
            out.extend(softmax_rows(&self.logits(&x)?));
        }
        Ok(out)
    }

    fn mean_loss(&self, images: &[GrayImage], labels: &[usize], indices: &[usize]) -> Result<(f64, f64), ClassifyError> {
        let probs = self.predict_proba(images, indices)?;
        let mut loss = 0.0;
        let mut correct = 0;
        for (p, &i) in probs.iter().zip(indices) {
            loss -= p[labels[i]].max(1e-300).ln();
            if super::argmax(p) == labels[i] {
                correct += 1;
            }
        }
        let n = indices.len().max(1) as f64;
        Ok((loss / n, correct as f64 / n))
    }

    fn tensors(&self) -> Vec<&Tensor> {
        self.net
            .layers
            .iter()
            .flat_map(|l| l.params.iter().chain(l.buffers.iter()))
            .collect()
    }

    pub fn to_checkpoint_bytes(&self, metadata: &CheckpointMetadata) -> Result<Vec<u8>, ClassifyError> {
        Ok(checkpoint::encode(CNN_KIND, &self.arch, &self.tensors(), metadata)?)
    }

    pub fn from_raw(raw: checkpoint::RawCheckpoint) -> Result<(Self, CheckpointMetadata), ClassifyError> {
        let arch: CnnArchitecture = raw.architecture_as(CNN_KIND)?;
        let mut model = cnn_build(arch.image_size, arch.num_classes, &arch.channel_plan, 0)
            .map_err(|e| CheckpointError::ArchitectureMismatch(e.to_string()))?;
        let expected: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
        raw.expect_shapes(&expected)?;
        let mut src = raw.tensors.into_iter();
        for layer in &mut model.net.layers {
            for t in layer.params.iter_mut().chain(layer.buffers.iter_mut()) {
                *t = src.next().expect("count checked");
            }
        }
        Ok((model, raw.metadata))
    }

    pub fn save_checkpoint(&self, path: &Path, metadata: &CheckpointMetadata) -> Result<(), ClassifyError> {
        Ok(checkpoint::write_file(path, &self.to_checkpoint_bytes(metadata)?)?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, CheckpointMetadata), ClassifyError> {
        Self::from_raw(checkpoint::read_file(path)?)
    }
}

/// Mini-batch Adam on softmax cross-entropy with early stopping on the
/// validation loss. Deterministic for a fixed `cfg.seed`.
pub fn cnn_train(
    model: &mut CnnModel,
    images: &[GrayImage],
    labels: &[usize],
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&CnnEpoch),
) -> Result<CnnHistory, ClassifyError> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(ClassifyError::Input("train and validation partitions must be non-empty".into()));
    }
    let k = model.arch.num_classes;
    if labels.len() != images.len() || labels.iter().any(|&l| l >= k) {
        return Err(ClassifyError::Input(format!("need one label < {k} per image")));
    }
    let uniform = ClassWeights::uniform(k);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new();
    let mut order = split.train.clone();
    let mut history = CnnHistory {
        epochs: Vec::new(),
        stopped_early: false,
    };
    let mut val_losses = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = images_to_tensor(images, batch).map_err(|e| ClassifyError::Input(e.to_string()))?;
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, caches) = model.net.forward(&x, Mode::Train, &mut rng)?;
            let (loss, grad) = nn::weighted_cross_entropy(&logits, &y, &uniform)?;
            let (_, grads) = model.net.backward(&caches, &grad)?;
            let grads: Vec<Tensor> = grads.into_iter().flatten().collect();
            let mut params: Vec<&mut Tensor> = model.net.params_mut().collect();
            adam.step(&mut params, &grads, cfg.learning_rate)?;
            total += loss * batch.len() as f64;
        }
        let (validation_loss, validation_accuracy) = model.mean_loss(images, labels, &split.validation)?;
        let record = CnnEpoch {
            epoch,
            train_loss: total / order.len() as f64,
            validation_loss,
            validation_accuracy,
        };
        on_epoch(&record);
        val_losses.push(validation_loss);
        history.epochs.push(record);
        if epoch < cfg.max_epochs && should_stop(&val_losses, cfg.early_stop_patience) {
            history.stopped_early = true;
            break;
        }
    }
    Ok(history)
}
