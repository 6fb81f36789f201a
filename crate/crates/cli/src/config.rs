use std::path::{Path, PathBuf};

use clayshape::classify::DEFAULT_CHANNEL_PLAN;
use clayshape::nn::TrainConfig;
use clayshape::preprocess::MaskParams;
use clayshape::vae::{DEFAULT_ENCODER_CHANNELS, DEFAULT_KERNEL, DEFAULT_LATENT_DIM};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeOverrides {
    pub latent_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
}

/// Every setting a run can depend on. Defaults, then the `--config` file,
/// then command-line flags; the result is written into each manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub catalog: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Side of the square model input.
    pub image_size: usize,
    /// Side of the square image used for silhouette measurement.
    pub measure_size: usize,
    pub mask: MaskParams,
    pub split_seed: u64,
    pub stratify: bool,
    pub cnn_train: TrainConfig,
    pub cnn_channel_plan: Vec<usize>,
    pub vae_train: TrainConfig,
    pub vae: VaeOverrides,
    pub synth: SynthOptions,
    /// Test classes with fewer samples are reported as "Other (?)".
    pub rare_class_min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut cnn_train = TrainConfig::cnn_defaults();
        cnn_train.learning_rate = 1e-3;
        Self {
            catalog: None,
            taxonomy: None,
            out: None,
            checkpoint: None,
            image_size: 64,
            measure_size: 512,
            mask: MaskParams::default(),
            split_seed: 0,
            stratify: true,
            cnn_train,
            cnn_channel_plan: DEFAULT_CHANNEL_PLAN.to_vec(),
            vae_train: TrainConfig::vae_defaults(),
            vae: VaeOverrides {
                latent_dim: DEFAULT_LATENT_DIM,
                encoder_channels: DEFAULT_ENCODER_CHANNELS.to_vec(),
                kernel: DEFAULT_KERNEL,
            },
            synth: SynthOptions {
                classes: 4,
                per_class: 250,
                size: 64,
                seed: 1,
            },
            rare_class_min_count: 10,
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    /// Defaults overlaid with a (possibly partial) JSON object.
    pub fn from_json_overrides(text: &str) -> Result<Self, CliError> {
        let over: Value = serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if !over.is_object() {
            return Err(CliError::Usage("config must be a JSON object".into()));
        }
        let mut base = serde_json::to_value(Self::default()).expect("plain data");
        let known: Vec<String> = base.as_object().unwrap().keys().cloned().collect();
        if let Some(k) = over.as_object().unwrap().keys().find(|k| !known.contains(k)) {
            return Err(CliError::Usage(format!("config: unknown key {k:?}")));
        }
        merge(&mut base, over);
        serde_json::from_value(base).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json_overrides(&text)
            }
        }
    }

    pub fn require_catalog(&self) -> Result<&Path, CliError> {
        self.catalog
            .as_deref()
            .ok_or_else(|| CliError::Usage("--catalog is required (flag or config)".into()))
    }

    pub fn require_out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required (flag or config)".into()))
    }

    pub fn require_checkpoint(&self) -> Result<&Path, CliError> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required (flag or config)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override_keeps_other_defaults() {
        let c = RunConfig::from_json_overrides(r#"{"vae_train": {"max_epochs": 2}, "mask": {"threshold": 0.3}}"#).unwrap();
        assert_eq!(c.vae_train.max_epochs, 2);
        assert_eq!(c.vae_train.learning_rate, 1e-4);
        assert_eq!(c.mask.threshold, 0.3);
        assert_eq!(c.mask.blur_kernel, MaskParams::default().blur_kernel);
        assert_eq!(c.image_size, 64);
    }

    #[test]
    fn unknown_keys_and_bad_types_are_usage_errors() {
        assert!(matches!(RunConfig::from_json_overrides(r#"{"imagesize": 3}"#), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_json_overrides(r#"{"image_size": "big"}"#), Err(CliError::Usage(_))));
        assert!(matches!(RunConfig::from_json_overrides("[1]"), Err(CliError::Usage(_))));
    }

    #[test]
    fn defaults_roundtrip() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        assert_eq!(RunConfig::from_json_overrides(&text).unwrap(), RunConfig::default());
    }
}
