//! Finite-difference audits of every layer kind and every loss, run in f64.

use clayshape::nn::gradcheck::{max_relative_error, numeric_gradient, FD_EPSILON, FD_FLOOR};
use clayshape::nn::{
    kl_standard_normal, mse, weighted_cross_entropy, ClassWeights, Layer, LayerSpec, LossWeights, Mode,
    ReconReduction, Tensor,
};
use clayshape::vae::{reparameterize, Vae, VaeArchitecture};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inputs drawn this far from any kink keep ReLU and max-pool differentiable
/// at every probe point.
const KINK_MARGIN: f64 = 0.05;

pub const LAYER_KINDS: [&str; 9] = [
    "conv2d",
    "conv_transpose2d",
    "dense",
    "batchnorm2d",
    "relu",
    "sigmoid",
    "dropout",
    "maxpool2d",
    "reshape",
];

pub const LOSS_KINDS: [&str; 4] = ["mse", "kl", "weighted_ce", "vae_composite"];

type T64 = Tensor<f64>;

fn to64(t: &T64) -> Vec<f64> {
    t.data().to_vec()
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> T64 {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    let mut t = uniform(shape, -1.0, 1.0, rng);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + KINK_MARGIN);
    }
    t
}

/// Distinct values spaced well beyond the probe step, shuffled.
fn spaced(shape: &[usize], rng: &mut ChaCha8Rng) -> T64 {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), vals).unwrap()
}

fn project(y: &T64, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Largest relative error between analytic and numeric gradients of
/// `sum(r * layer(x))` with respect to the input and every parameter.
pub fn layer_error(layer: &Layer<f64>, x: &T64, mode: Mode, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let run = |l: &Layer<f64>, x: &T64| {
        let mut l = l.clone();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        l.forward(x, mode, &mut r).unwrap()
    };
    let (y, cache) = run(layer, x);
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let gy = Tensor::new(y.shape().to_vec(), r.clone()).unwrap();
    let (gx, gparams) = layer.backward(&cache, &gy).unwrap();

    let mut xs = x.data().to_vec();
    let num_x = numeric_gradient(&mut xs, FD_EPSILON, |v| {
        project(&run(layer, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()).0, &r)
    });
    let mut worst = max_relative_error(&to64(&gx), &num_x, FD_FLOOR);
    for (p, gp) in gparams.iter().enumerate() {
        let mut ps = layer.params[p].data().to_vec();
        let shape = layer.params[p].shape().to_vec();
        let num = numeric_gradient(&mut ps, FD_EPSILON, |v| {
            let mut l = layer.clone();
            l.params[p] = Tensor::new(shape.clone(), v.to_vec()).unwrap();
            project(&run(&l, x).0, &r)
        });
        worst = worst.max(max_relative_error(&to64(gp), &num, FD_FLOOR));
    }
    worst
}

/// A random configuration of one layer kind with a matching input.
pub fn random_layer_case(kind: &str, rng: &mut ChaCha8Rng) -> (Layer<f64>, T64, Mode) {
    let b = rng.random_range(1..=3);
    let c_in = rng.random_range(1..=3);
    let c_out = rng.random_range(1..=3);
    let side = rng.random_range(4..=7);
    let (spec, shape, mode) = match kind {
        "conv2d" => {
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            let spec = LayerSpec::Conv2d {
                in_channels: c_in,
                out_channels: c_out,
                kernel,
                stride: rng.random_range(1..=2),
                padding: rng.random_range(0..=kernel / 2),
            };
            (spec, vec![b, c_in, side.max(kernel), side.max(kernel)], Mode::Train)
        }
        "conv_transpose2d" => {
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            let stride = rng.random_range(1..=2);
            let spec = LayerSpec::ConvTranspose2d {
                in_channels: c_in,
                out_channels: c_out,
                kernel,
                stride,
                padding: rng.random_range(0..=kernel / 2),
                output_padding: rng.random_range(0..stride),
            };
            (spec, vec![b, c_in, side - 1, side - 1], Mode::Train)
        }
        "dense" => {
            let fi = rng.random_range(1..=12);
            let spec = LayerSpec::Dense {
                in_features: fi,
                out_features: rng.random_range(1..=6),
            };
            (spec, vec![b, fi], Mode::Train)
        }
        "batchnorm2d" => {
            let mode = if rng.random_bool(0.5) { Mode::Train } else { Mode::Eval };
            (LayerSpec::BatchNorm2d { channels: c_in }, vec![b.max(2), c_in, 3, 3], mode)
        }
        "relu" => (LayerSpec::ReLU, vec![b, c_in, side, side], Mode::Train),
        "sigmoid" => (LayerSpec::Sigmoid, vec![b, c_in * 4], Mode::Train),
        "dropout" => (
            LayerSpec::Dropout {
                p: rng.random_range(0.1..0.7),
            },
            vec![b, 10],
            Mode::Train,
        ),
        "maxpool2d" => {
            let size = rng.random_range(2..=3);
            (LayerSpec::MaxPool2d { size }, vec![b, c_in, size * 2, size * 3], Mode::Train)
        }
        "reshape" => (
            LayerSpec::Reshape {
                shape: vec![c_in, 2, 3],
            },
            vec![b, c_in * 6],
            Mode::Train,
        ),
        other => panic!("unknown layer kind {other}"),
    };
    let mut layer: Layer<f64> = Layer::new(spec, rng).unwrap();
    for p in &mut layer.params {
        for v in p.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    if let LayerSpec::BatchNorm2d { .. } = layer.spec {
        for v in layer.buffers[0].data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for v in layer.buffers[1].data_mut() {
            *v = rng.random_range(0.5..2.0);
        }
    }
    let x = match kind {
        "maxpool2d" => spaced(&shape, rng),
        "relu" => away_from_zero(&shape, rng),
        _ => uniform(&shape, -1.0, 1.0, rng),
    };
    (layer, x, mode)
}

/// Worst error of one loss over one random configuration.
pub fn loss_error(kind: &str, rng: &mut ChaCha8Rng) -> f64 {
    let b = rng.random_range(1..=4);
    match kind {
        "mse" => {
            let shape = [b, rng.random_range(1..=3), 3, 3];
            let p = uniform(&shape, 0.0, 1.0, rng);
            let t = uniform(&shape, 0.0, 1.0, rng);
            let (_, g) = mse(&p, &t).unwrap();
            let mut xs = p.data().to_vec();
            let num = numeric_gradient(&mut xs, FD_EPSILON, |v| {
                mse(&Tensor::new(shape.to_vec(), v.to_vec()).unwrap(), &t).unwrap().0
            });
            max_relative_error(&to64(&g), &num, FD_FLOOR)
        }
        "kl" => {
            let shape = [b, rng.random_range(1..=12)];
            let mu = uniform(&shape, -2.0, 2.0, rng);
            let lv = uniform(&shape, -2.0, 2.0, rng);
            let (_, g) = kl_standard_normal(&mu, &lv).unwrap();
            let mut ms = mu.data().to_vec();
            let num_mu = numeric_gradient(&mut ms, FD_EPSILON, |v| {
                kl_standard_normal(&Tensor::new(shape.to_vec(), v.to_vec()).unwrap(), &lv).unwrap().0
            });
            let mut ls = lv.data().to_vec();
            let num_lv = numeric_gradient(&mut ls, FD_EPSILON, |v| {
                kl_standard_normal(&mu, &Tensor::new(shape.to_vec(), v.to_vec()).unwrap()).unwrap().0
            });
            max_relative_error(&to64(&g.mu), &num_mu, FD_FLOOR)
                .max(max_relative_error(&to64(&g.logvar), &num_lv, FD_FLOOR))
        }
        "weighted_ce" => {
            let k = rng.random_range(2..=5);
            let logits = uniform(&[b, k], -3.0, 3.0, rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            let weights = ClassWeights::normalized((0..k).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap();
            let (_, g) = weighted_cross_entropy(&logits, &labels, &weights).unwrap();
            let mut xs = logits.data().to_vec();
            let num = numeric_gradient(&mut xs, FD_EPSILON, |v| {
                weighted_cross_entropy(&Tensor::new(vec![b, k], v.to_vec()).unwrap(), &labels, &weights)
                    .unwrap()
                    .0
            });
            max_relative_error(&to64(&g), &num, FD_FLOOR)
        }
        "vae_composite" => vae_error(rng),
        other => panic!("unknown loss {other}"),
    }
}

/// A tiny random VAE (8x8 images, latent 2) and a batch for which no ReLU
/// input lies within `margin` of zero.
fn vae_case(rng: &mut ChaCha8Rng) -> (Vae<f64>, T64, Vec<usize>, T64, usize) {
    loop {
        let classes = rng.random_range(2..=3);
        let mut arch = VaeArchitecture::new(8, classes);
        arch.latent_dim = 2;
        arch.kernel = [3, 5][rng.random_range(0..2)];
        arch.encoder_channels = vec![rng.random_range(1..=3), rng.random_range(1..=3)];
        let mut model: Vae<f64> = Vae::new(arch, rng.random()).unwrap();
        for p in model.params_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-0.6..0.6);
            }
        }
        let b = rng.random_range(1..=3);
        let images = uniform(&[b, 1, 8, 8], 0.0, 1.0, rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..classes)).collect();
        let eps = uniform(&[b, 2], -1.5, 1.5, rng);
        if relu_margin(&model, &images, &eps) > 0.02 {
            return (model, images, labels, eps, classes);
        }
    }
}

/// Smallest |input| over every ReLU in the encoder and decoder.
fn relu_margin(model: &Vae<f64>, images: &T64, eps: &T64) -> f64 {
    let layers: Vec<&Layer<f64>> = model.layers().collect();
    let enc_len = layers.iter().position(|l| matches!(l.spec, LayerSpec::Dense { .. })).unwrap();
    let mut margin = f64::INFINITY;
    let mut run = |stack: &[&Layer<f64>], mut x: T64| {
        for l in stack {
            if l.spec == LayerSpec::ReLU {
                margin = x.data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            x = l.infer(&x).unwrap();
        }
        x
    };
    let features = run(&layers[..enc_len], images.clone());
    let mu = layers[enc_len].infer(&features).unwrap();
    let lv = layers[enc_len + 1].infer(&features).unwrap();
    let z = reparameterize(mu.data(), lv.data(), eps.data()).unwrap();
    run(&layers[enc_len + 3..], Tensor::new(mu.shape().to_vec(), z).unwrap());
    margin
}

fn vae_error(rng: &mut ChaCha8Rng) -> f64 {
    let (mut model, images, labels, eps, classes) = vae_case(rng);
    let cw = ClassWeights::normalized((0..classes).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap();
    let weights = LossWeights {
        lambda_recon: rng.random_range(0.5..2.0),
        beta: rng.random_range(0.0..2.0),
        lambda_class: rng.random_range(0.0..2.0),
        recon_reduction: if rng.random_bool(0.5) {
            ReconReduction::Sum
        } else {
            ReconReduction::Mean
        },
    };
    let step = model.loss_and_grads(&images, &labels, &cw, weights, &eps).unwrap();
    let mut worst: f64 = 0.0;
    for p in 0..step.grads.len() {
        let mut xs = model.params()[p].data().to_vec();
        let num = numeric_gradient(&mut xs, FD_EPSILON, |v| {
            model.params_mut()[p].data_mut().copy_from_slice(v);
            model.loss_and_grads(&images, &labels, &cw, weights, &eps).unwrap().loss.total
        });
        model.params_mut()[p].data_mut().copy_from_slice(&xs);
        worst = worst.max(max_relative_error(&to64(&step.grads[p]), &num, FD_FLOOR));
    }
    worst
}

/// `(kind, worst error)` for every layer kind and loss over `configs`
/// random configurations each.
pub fn audit(configs: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for kind in LAYER_KINDS {
        let worst = (0..configs)
            .map(|c| {
                let (layer, x, mode) = random_layer_case(kind, &mut rng);
                layer_error(&layer, &x, mode, c as u64)
            })
            .fold(0.0, f64::max);
        out.push((kind.to_string(), worst));
    }
    for kind in LOSS_KINDS {
        let worst = (0..configs).map(|_| loss_error(kind, &mut rng)).fold(0.0, f64::max);
        out.push((kind.to_string(), worst));
    }
    out
}
