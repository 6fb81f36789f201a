use std::path::Path;

use super::{Vae, VaeArchitecture, VaeError};
use crate::checkpoint::{self, CheckpointError, CheckpointMetadata};

pub const VAE_KIND: &str = "vae";

impl Vae {
    pub fn to_checkpoint_bytes(&self, metadata: &CheckpointMetadata) -> Result<Vec<u8>, VaeError> {
        let tensors: Vec<_> = self
            .layers()
            .flat_map(|l| l.params.iter().chain(l.buffers.iter()))
            .collect();
        Ok(checkpoint::encode(VAE_KIND, self.architecture(), &tensors, metadata)?)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, CheckpointMetadata), VaeError> {
        Self::from_raw(checkpoint::decode(bytes)?)
    }

    pub fn from_raw(raw: checkpoint::RawCheckpoint) -> Result<(Self, CheckpointMetadata), VaeError> {
        let arch: VaeArchitecture = raw.architecture_as(VAE_KIND)?;
        let mut model =
            Vae::new(arch, 0).map_err(|e| CheckpointError::ArchitectureMismatch(e.to_string()))?;
        let expected: Vec<Vec<usize>> = model
            .layers()
            .flat_map(|l| l.params.iter().chain(l.buffers.iter()))
            .map(|t| t.shape().to_vec())
            .collect();
        raw.expect_shapes(&expected)?;
        let mut src = raw.tensors.into_iter();
        for layer in model.layers_mut() {
            for t in layer.params.iter_mut().chain(layer.buffers.iter_mut()) {
                *t = src.next().expect("count checked");
            }
        }
        Ok((model, raw.metadata))
    }

    pub fn save_checkpoint(&self, path: &Path, metadata: &CheckpointMetadata) -> Result<(), VaeError> {
        Ok(checkpoint::write_file(path, &self.to_checkpoint_bytes(metadata)?)?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, CheckpointMetadata), VaeError> {
        Self::from_raw(checkpoint::read_file(path)?)
    }
}
