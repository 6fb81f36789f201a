use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are kept in f64.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], learning_rate: f64) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::Shape {
                context: "Adam::step",
                expected: format!("{} gradients", params.len()),
                got: format!("{}", grads.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            g.ensure_shape("Adam::step gradient", p.shape())?;
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(NnError::InvalidArgument(
                "parameter set changed between Adam steps".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi as f64;
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let update = learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
                *w = (*w as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

/// True once the best validation loss has gone `patience` consecutive epochs
/// without a strict improvement.
pub fn should_stop(history: &[f64], patience: usize) -> bool {
    let patience = patience.max(1);
    let mut best = f64::INFINITY;
    let mut since = 0usize;
    for &loss in history {
        if loss < best {
            best = loss;
            since = 0;
        } else {
            since += 1;
        }
    }
    since >= patience
}

/// Hyperparameters shared by the CNN and VAE training loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
}

/// How the reconstruction error enters the VAE objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconReduction {
    /// Squared error summed over the pixels of each image, averaged over the batch.
    #[default]
    Sum,
    /// Squared error averaged over pixels and batch.
    Mean,
}

/// Mixing weights of the VAE objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_recon: f64,
    pub beta: f64,
    pub lambda_class: f64,
    #[serde(default)]
    pub recon_reduction: ReconReduction,
}

impl LossWeights {
    /// Factor applied to the per-pixel MSE for images of `pixels` pixels.
    pub fn recon_scale(&self, pixels: usize) -> f64 {
        match self.recon_reduction {
            ReconReduction::Sum => self.lambda_recon * pixels as f64,
            ReconReduction::Mean => self.lambda_recon,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_recon: 1.0,
            beta: 1.0,
            lambda_class: 1.0,
            recon_reduction: ReconReduction::Sum,
        }
    }
}

impl TrainConfig {
    /// 9 epochs, learning rate 1e-4, batch 8.
    pub fn vae_defaults() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            max_epochs: 9,
            early_stop_patience: 3,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }

    /// Batch 16, learning rate 1e-5.
    pub fn cnn_defaults() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 16,
            max_epochs: 10,
            early_stop_patience: 2,
            seed: 0,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidArgument(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::InvalidArgument("batch size must be >= 1".into()));
        }
        let w = self.loss_weights;
        if w.beta < 0.0 || w.lambda_recon < 0.0 || w.lambda_class < 0.0 {
            return Err(NnError::InvalidArgument("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}
