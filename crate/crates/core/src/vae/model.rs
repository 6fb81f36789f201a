use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::VaeError;
use crate::nn::{self, ClassWeights, Element, Layer, LayerSpec, LossWeights, Mode, Sequential, Tensor};

/// Encoder widths: 32 and 256 at the ends with a near-geometric ramp between.
pub const DEFAULT_ENCODER_CHANNELS: [usize; 5] = [32, 64, 96, 160, 256];
pub const DEFAULT_LATENT_DIM: usize = 12;
pub const DEFAULT_KERNEL: usize = 5;

/// Shape of a [`Vae`]. Every encoder stage is a stride-2 convolution, so
/// `image_size` must be divisible by `2^encoder_channels.len()`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub image_size: usize,
    pub latent_dim: usize,
    pub encoder_channels: Vec<usize>,
    pub kernel: usize,
    pub num_classes: usize,
}

impl VaeArchitecture {
    /// The default five-stage, 12-dimensional model.
    pub fn new(image_size: usize, num_classes: usize) -> Self {
        Self {
            image_size,
            latent_dim: DEFAULT_LATENT_DIM,
            encoder_channels: DEFAULT_ENCODER_CHANNELS.to_vec(),
            kernel: DEFAULT_KERNEL,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<(), VaeError> {
        let stages = self.encoder_channels.len();
        let bad = |m: String| Err(VaeError::Architecture(m));
        if stages == 0 {
            return bad("at least one encoder stage is required".into());
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be >= 1".into());
        }
        if self.kernel % 2 == 0 {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        if self.image_size == 0 || self.image_size % (1 << stages) != 0 {
            return bad(format!(
                "image_size {} is not divisible by 2^{stages}",
                self.image_size
            ));
        }
        if self.encoder_channels.contains(&0) {
            return bad("encoder channels must be >= 1".into());
        }
        Ok(())
    }

    /// Spatial side of the last encoder feature map.
    pub fn bottom_side(&self) -> usize {
        self.image_size >> self.encoder_channels.len()
    }

    /// Width of the flattened encoder output.
    pub fn feature_len(&self) -> usize {
        self.encoder_channels.last().copied().unwrap_or(0) * self.bottom_side().pow(2)
    }

    fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut prev = 1;
        for &ch in &self.encoder_channels {
            specs.push(LayerSpec::Conv2d {
                in_channels: prev,
                out_channels: ch,
                kernel: self.kernel,
                stride: 2,
                padding: self.kernel / 2,
            });
            specs.push(LayerSpec::ReLU);
            prev = ch;
        }
        specs
    }

    fn decoder_specs(&self) -> Vec<LayerSpec> {
        let last = *self.encoder_channels.last().expect("validated");
        let side = self.bottom_side();
        let mut specs = vec![
            LayerSpec::Dense {
                in_features: self.latent_dim,
                out_features: self.feature_len(),
            },
            LayerSpec::ReLU,
            LayerSpec::Reshape {
                shape: vec![last, side, side],
            },
        ];
        let mut widths: Vec<usize> = self.encoder_channels.iter().rev().copied().collect();
        widths.push(1);
        for (i, pair) in widths.windows(2).enumerate() {
            specs.push(LayerSpec::ConvTranspose2d {
                in_channels: pair[0],
                out_channels: pair[1],
                kernel: self.kernel,
                stride: 2,
                padding: self.kernel / 2,
                output_padding: 1,
            });
            specs.push(if i + 2 == widths.len() {
                LayerSpec::Sigmoid
            } else {
                LayerSpec::ReLU
            });
        }
        specs
    }
}

/// Loss terms of one batch. `total` is the weighted sum of the other three.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VaeLossBreakdown {
    pub total: f64,
    pub recon_mse: f64,
    pub kl: f64,
    pub weighted_ce: f64,
    pub weights: LossWeights,
}

impl VaeLossBreakdown {
    pub(crate) fn combine(recon_mse: f64, kl: f64, weighted_ce: f64, weights: LossWeights, pixels: usize) -> Self {
        Self {
            total: weights.recon_scale(pixels) * recon_mse + weights.beta * kl + weights.lambda_class * weighted_ce,
            recon_mse,
            kl,
            weighted_ce,
            weights,
        }
    }
}

/// Variational autoencoder with a class head on the posterior mean.
///
/// Parameter declaration order (used by checkpoints and the optimizer):
/// encoder, `mu` head, `logvar` head, class head, decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Vae<E: Element = f32> {
    arch: VaeArchitecture,
    pub(crate) encoder: Sequential<E>,
    pub(crate) mu_head: Layer<E>,
    pub(crate) logvar_head: Layer<E>,
    pub(crate) class_head: Layer<E>,
    pub(crate) decoder: Sequential<E>,
}

/// Result of [`Vae::loss_and_grads`].
#[derive(Clone, Debug)]
pub struct VaeStep<E: Element = f32> {
    pub loss: VaeLossBreakdown,
    /// Aligned with [`Vae::params`].
    pub grads: Vec<Tensor<E>>,
}

impl<E: Element> Vae<E> {
    /// He-initialised layers except the `mu` and `logvar` heads, which start at
    /// zero so an untrained model encodes every image to `mu = 0, logvar = 0`
    /// (and therefore uniform class logits).
    pub fn new(arch: VaeArchitecture, seed: u64) -> Result<Self, VaeError> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Sequential::new(arch.encoder_specs(), &mut rng)?;
        let dense = |i, o| LayerSpec::Dense {
            in_features: i,
            out_features: o,
        };
        let mu_head = Layer::zeroed(dense(arch.feature_len(), arch.latent_dim))?;
        let logvar_head = Layer::zeroed(dense(arch.feature_len(), arch.latent_dim))?;
        let decoder = Sequential::new(arch.decoder_specs(), &mut rng)?;
        let class_head = Layer::new(dense(arch.latent_dim, arch.num_classes), &mut rng)?;
        let model = Self {
            arch,
            encoder,
            mu_head,
            logvar_head,
            class_head,
            decoder,
        };
        let s = model.arch.image_size;
        let feat = model.encoder.output_shape(&[1, s, s])?;
        let recon = model.decoder.output_shape(&[model.arch.latent_dim])?;
        debug_assert_eq!(feat.iter().product::<usize>(), model.arch.feature_len());
        if recon != [1, s, s] {
            return Err(VaeError::Architecture(format!(
                "decoder produces {recon:?}, expected [1, {s}, {s}]"
            )));
        }
        Ok(model)
    }

    /// Copy of the model in another precision.
    pub fn cast<F: Element>(&self) -> Vae<F> {
        Vae {
            arch: self.arch.clone(),
            encoder: self.encoder.cast(),
            mu_head: self.mu_head.cast(),
            logvar_head: self.logvar_head.cast(),
            class_head: self.class_head.cast(),
            decoder: self.decoder.cast(),
        }
    }

    pub fn architecture(&self) -> &VaeArchitecture {
        &self.arch
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn image_size(&self) -> usize {
        self.arch.image_size
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Every layer in declaration order.
    pub fn layers(&self) -> impl Iterator<Item = &Layer<E>> {
        self.encoder
            .layers
            .iter()
            .chain([&self.mu_head, &self.logvar_head, &self.class_head])
            .chain(self.decoder.layers.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<E>> {
        self.encoder
            .layers
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head, &mut self.class_head])
            .chain(self.decoder.layers.iter_mut())
    }

    pub fn params(&self) -> Vec<&Tensor<E>> {
        self.layers().flat_map(|l| l.params.iter()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<E>> {
        self.layers_mut().flat_map(|l| l.params.iter_mut()).collect()
    }

    fn check_images(&self, images: &Tensor<E>) -> Result<(), VaeError> {
        let s = self.arch.image_size;
        match images.shape() {
            [_, 1, h, w] if *h == s && *w == s => Ok(()),
            other => Err(VaeError::Shape(format!("expected images [B, 1, {s}, {s}], got {other:?}"))),
        }
    }

    fn check_latent(&self, z: &Tensor<E>) -> Result<(), VaeError> {
        match z.shape() {
            [_, d] if *d == self.arch.latent_dim => Ok(()),
            other => Err(VaeError::Shape(format!(
                "expected latent [B, {}], got {other:?}",
                self.arch.latent_dim
            ))),
        }
    }

    /// Posterior parameters `(mu, logvar)`, each `[B, latent_dim]`.
    pub fn encode(&self, images: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>), VaeError> {
        self.check_images(images)?;
        let features = self.encoder.infer(images)?;
        Ok((self.mu_head.infer(&features)?, self.logvar_head.infer(&features)?))
    }

    /// Decoded images `[B, 1, S, S]` with values in `[0, 1]`.
    pub fn decode(&self, z: &Tensor<E>) -> Result<Tensor<E>, VaeError> {
        self.check_latent(z)?;
        let n = z.batch();
        let s = self.arch.image_size;
        Ok(self.decoder.infer(z)?.reshape(&[n, 1, s, s])?)
    }

    /// Class logits `[B, K]` computed from `mu`.
    pub fn classify(&self, mu: &Tensor<E>) -> Result<Tensor<E>, VaeError> {
        self.check_latent(mu)?;
        Ok(self.class_head.infer(mu)?)
    }

    /// Forward and backward pass of the weighted objective
    /// `lambda_recon * MSE + beta * KL + lambda_class * WCE` for one batch, where
    /// the MSE is scaled to a per-image sum unless `weights.recon_reduction` is
    /// `Mean`. The reparameterisation noise is supplied by the caller.
    pub fn loss_and_grads(
        &mut self,
        images: &Tensor<E>,
        labels: &[usize],
        class_weights: &ClassWeights,
        weights: LossWeights,
        epsilon: &Tensor<E>,
    ) -> Result<VaeStep<E>, VaeError> {
        self.check_images(images)?;
        let n = images.batch();
        if labels.len() != n {
            return Err(VaeError::Shape(format!("{} labels for a batch of {n}", labels.len())));
        }
        epsilon.ensure_shape("vae epsilon", &[n, self.arch.latent_dim])?;
        // No layer in the model draws randomness; the rng only satisfies the signature.
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let (features, enc_caches) = self.encoder.forward(images, Mode::Train, &mut rng)?;
        let (mu, mu_cache) = self.mu_head.forward(&features, Mode::Train, &mut rng)?;
        let (logvar, lv_cache) = self.logvar_head.forward(&features, Mode::Train, &mut rng)?;
        let z = reparameterize_batch(&mu, &logvar, epsilon)?;
        let (recon, dec_caches) = self.decoder.forward(&z, Mode::Train, &mut rng)?;
        let recon = recon.reshape(images.shape())?;
        let (logits, cls_cache) = self.class_head.forward(&mu, Mode::Train, &mut rng)?;

        let (recon_mse, g_recon) = nn::mse(&recon, images)?;
        let (kl, g_kl) = nn::kl_standard_normal(&mu, &logvar)?;
        let (wce, g_logits) = nn::weighted_cross_entropy(&logits, labels, class_weights)?;
        let pixels = images.item_len();
        let loss = VaeLossBreakdown::combine(recon_mse, kl, wce, weights, pixels);

        let scale = |t: Tensor<E>, w: f64| -> Tensor<E> {
            let shape = t.shape().to_vec();
            let data = t.into_data().into_iter().map(|v| E::of_f64(v.as_f64() * w)).collect();
            Tensor::new(shape, data).expect("same shape")
        };
        let dec_out_shape = self.decoder.output_shape(&[self.arch.latent_dim])?;
        let mut g_dec_shape = vec![n];
        g_dec_shape.extend(dec_out_shape);
        let g_recon = scale(g_recon, weights.recon_scale(pixels)).reshape(&g_dec_shape)?;
        let (g_z, dec_grads) = self.decoder.backward(&dec_caches, &g_recon)?;
        let (g_mu_cls, cls_grads) = self
            .class_head
            .backward(&cls_cache, &scale(g_logits, weights.lambda_class))?;

        // z = mu + exp(logvar / 2) * eps
        let mut g_mu = g_z.clone();
        let mut g_lv = Tensor::zeros(logvar.shape());
        for i in 0..g_mu.len() {
            let sigma = (0.5 * logvar.data()[i].as_f64()).exp();
            let gz = g_z.data()[i].as_f64();
            g_mu.data_mut()[i] =
                E::of_f64(gz + weights.beta * g_kl.mu.data()[i].as_f64() + g_mu_cls.data()[i].as_f64());
            g_lv.data_mut()[i] = E::of_f64(
                gz * 0.5 * sigma * epsilon.data()[i].as_f64() + weights.beta * g_kl.logvar.data()[i].as_f64(),
            );
        }
        let (g_feat_mu, mu_grads) = self.mu_head.backward(&mu_cache, &g_mu)?;
        let (g_feat_lv, lv_grads) = self.logvar_head.backward(&lv_cache, &g_lv)?;
        let mut g_feat = g_feat_mu;
        for (a, &b) in g_feat.data_mut().iter_mut().zip(g_feat_lv.data()) {
            *a += b;
        }
        let (_, enc_grads) = self.encoder.backward(&enc_caches, &g_feat)?;

        let grads: Vec<Tensor<E>> = enc_grads
            .into_iter()
            .flatten()
            .chain(mu_grads)
            .chain(lv_grads)
            .chain(cls_grads)
            .chain(dec_grads.into_iter().flatten())
            .collect();
        debug_assert_eq!(grads.len(), self.params().len());
        if !grads.iter().all(Tensor::is_finite) || !loss.total.is_finite() {
            return Err(VaeError::Nn(nn::NnError::NonFinite("VAE loss".into())));
        }
        Ok(VaeStep { loss, grads })
    }
}

/// `z = mu + exp(logvar / 2) * epsilon`, elementwise.
pub fn reparameterize<E: Element>(mu: &[E], logvar: &[E], epsilon: &[E]) -> Result<Vec<E>, VaeError> {
    if mu.len() != logvar.len() || mu.len() != epsilon.len() {
        return Err(VaeError::Shape(format!(
            "reparameterize lengths differ: mu {}, logvar {}, epsilon {}",
            mu.len(),
            logvar.len(),
            epsilon.len()
        )));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(epsilon)
        .map(|((&m, &lv), &e)| E::of_f64(m.as_f64() + (0.5 * lv.as_f64()).exp() * e.as_f64()))
        .collect())
}

fn reparameterize_batch<E: Element>(mu: &Tensor<E>, logvar: &Tensor<E>, epsilon: &Tensor<E>) -> Result<Tensor<E>, VaeError> {
    let z = reparameterize(mu.data(), logvar.data(), epsilon.data())?;
    Ok(Tensor::new(mu.shape().to_vec(), z)?)
}

/// Standard-normal draws for a `[batch, latent_dim]` noise tensor.
pub fn sample_epsilon<R: Rng + ?Sized>(batch: usize, latent_dim: usize, rng: &mut R) -> Tensor {
    let data = (0..batch * latent_dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(vec![batch, latent_dim], data).expect("consistent shape")
}
