use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::ops::{col2im, gemm, im2col, Window};
use super::{Element, NnError, Tensor};

/// Architecture vocabulary shared by the CNN classifier and the VAE.
///
/// Convolution weights are laid out `[out, in, k, k]` for `Conv2d` and
/// `[in, out, k, k]` for `ConvTranspose2d`, so a transposed convolution built
/// from a convolution's weights is its exact adjoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
    /// Flattens everything after the batch axis.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm2d {
        channels: usize,
    },
    #[serde(rename = "relu")]
    ReLU,
    Sigmoid,
    Dropout {
        p: f32,
    },
    MaxPool2d {
        size: usize,
    },
    /// Reinterprets each batch item with the given per-item shape.
    Reshape {
        shape: Vec<usize>,
    },
}

pub const BN_MOMENTUM: f32 = 0.1;
pub const BN_EPS: f32 = 1e-5;

impl LayerSpec {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidSpec(msg));
        match *self {
            LayerSpec::Conv2d { kernel, stride, .. } | LayerSpec::ConvTranspose2d { kernel, stride, .. } => {
                if kernel == 0 || stride == 0 {
                    return bad(format!("kernel and stride must be >= 1 in {self:?}"));
                }
                if let LayerSpec::ConvTranspose2d { output_padding, .. } = *self {
                    if output_padding >= stride {
                        return bad(format!("output_padding must be < stride in {self:?}"));
                    }
                }
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("drop probability {p} outside [0, 1)"));
                }
            }
            LayerSpec::MaxPool2d { size } => {
                if size == 0 {
                    return bad("pool size must be >= 1".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Shapes of the trainable parameters, in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![out_channels, in_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![vec![in_channels, out_channels, kernel, kernel], vec![out_channels]],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![vec![out_features, in_features], vec![out_features]],
            LayerSpec::BatchNorm2d { channels } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }

    /// Shapes of non-trainable state (batch-norm running statistics).
    pub fn buffer_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::BatchNorm2d { channels } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }

    /// Per-item output shape for a per-item input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mismatch = |expected: String| NnError::Shape {
            context: "LayerSpec::output_shape",
            expected,
            got: format!("{input:?}"),
        };
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(mismatch(format!("[{in_channels}, H, W]")));
                };
                if c != *in_channels || h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(mismatch(format!(
                        "[{in_channels}, H, W] with H + 2*{padding} >= {kernel}"
                    )));
                }
                Ok(vec![
                    *out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ])
            }
            LayerSpec::ConvTranspose2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                output_padding,
            } => {
                let [c, h, w] = *input else {
                    return Err(mismatch(format!("[{in_channels}, H, W]")));
                };
                let grow = |x: usize| ((x.max(1) - 1) * stride + kernel + output_padding).checked_sub(2 * padding);
                match (c == *in_channels && h > 0 && w > 0, grow(h), grow(w)) {
                    (true, Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(vec![*out_channels, ho, wo]),
                    _ => Err(mismatch(format!("[{in_channels}, H, W]"))),
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != *in_features {
                    return Err(mismatch(format!("{in_features} features")));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::BatchNorm2d { channels } => match input {
                [c, _, _] if c == channels => Ok(input.to_vec()),
                _ => Err(mismatch(format!("[{channels}, H, W]"))),
            },
            LayerSpec::MaxPool2d { size } => match *input {
                [c, h, w] if h >= *size && w >= *size => Ok(vec![c, h / size, w / size]),
                _ => Err(mismatch(format!("[C, H, W] with H, W >= {size}"))),
            },
            LayerSpec::Reshape { shape } => {
                if shape.iter().product::<usize>() != input.iter().product::<usize>() {
                    return Err(mismatch(format!("{} elements", shape.iter().product::<usize>())));
                }
                Ok(shape.clone())
            }
            LayerSpec::ReLU | LayerSpec::Sigmoid | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Values saved by [`Layer::forward`] for the matching [`Layer::backward`].
#[derive(Clone, Debug)]
pub struct Cache<E: Element = f32> {
    spec: LayerSpec,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    saved: Saved<E>,
}

#[derive(Clone, Debug)]
enum Saved<E: Element> {
    None,
    Input(Tensor<E>),
    Output(Tensor<E>),
    Mask(Vec<E>),
    Argmax(Vec<usize>),
    Norm {
        x_hat: Vec<E>,
        inv_std: Vec<E>,
        train: bool,
    },
}

/// One layer: its spec, trainable parameters and non-trainable buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<E: Element = f32> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<E>>,
    pub buffers: Vec<Tensor<E>>,
}

impl<E: Element> Layer<E> {
    /// He-normal weights, zero biases, unit batch-norm scale.
    pub fn new<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Result<Self, NnError> {
        spec.validate()?;
        let fan_in = match spec {
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => in_channels * kernel * kernel,
            LayerSpec::ConvTranspose2d {
                in_channels,
                kernel,
                stride,
                ..
            } => (in_channels * kernel * kernel / (stride * stride)).max(1),
            LayerSpec::Dense { in_features, .. } => in_features,
            _ => 1,
        };
        let shapes = spec.param_shapes();
        let params = match spec {
            LayerSpec::BatchNorm2d { .. } => {
                vec![Tensor::filled(&shapes[0], E::one()), Tensor::zeros(&shapes[1])]
            }
            LayerSpec::Conv2d { .. } | LayerSpec::ConvTranspose2d { .. } | LayerSpec::Dense { .. } => {
                let std = (2.0 / fan_in as f32).sqrt();
                vec![Tensor::randn(&shapes[0], std, rng), Tensor::zeros(&shapes[1])]
            }
            _ => Vec::new(),
        };
        let buffers = match spec {
            LayerSpec::BatchNorm2d { channels } => {
                vec![Tensor::zeros(&[channels]), Tensor::filled(&[channels], E::one())]
            }
            _ => Vec::new(),
        };
        Ok(Self { spec, params, buffers })
    }

    /// A layer whose parameters are all zero (used for the VAE heads).
    pub fn zeroed(spec: LayerSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let params = spec.param_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        let buffers = spec.buffer_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Ok(Self { spec, params, buffers })
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Copy of the layer in another precision.
    pub fn cast<F: Element>(&self) -> Layer<F> {
        Layer {
            spec: self.spec.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
        }
    }

    /// Runs the layer on a batch. In train mode batch norm updates its running
    /// statistics and dropout samples a fresh mask from `rng`.
    pub fn forward(&mut self, input: &Tensor<E>, mode: Mode, rng: &mut dyn RngCore) -> Result<(Tensor<E>, Cache<E>), NnError> {
        let (out, cache, stats) = self.run(input, mode, Some(rng))?;
        if let Some((mean, var, count)) = stats {
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for (c, (m, v)) in mean.iter().zip(&var).enumerate() {
                let keep = E::of_f32(1.0 - BN_MOMENTUM);
                let step = E::of_f32(BN_MOMENTUM);
                let rm = &mut self.buffers[0].data_mut()[c];
                *rm = keep * *rm + step * E::of_f64(*m);
                let rv = &mut self.buffers[1].data_mut()[c];
                *rv = keep * *rv + step * E::of_f64(v * unbias);
            }
        }
        Ok((out, cache))
    }

    /// Eval-mode forward pass that leaves the layer untouched.
    pub fn infer(&self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        Ok(self.run(input, Mode::Eval, None)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        input: &Tensor<E>,
        mode: Mode,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Tensor<E>, Cache<E>, Option<(Vec<f64>, Vec<f64>, f64)>), NnError> {
        let mut stats = None;
        if input.shape().is_empty() {
            return Err(NnError::Shape {
                context: "Layer::forward",
                expected: "a batch axis".into(),
                got: "scalar".into(),
            });
        }
        let n = input.batch();
        let item_in = input.shape()[1..].to_vec();
        let item_out = self.spec.output_shape(&item_in)?;
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&item_out);

        let (out, saved) = match self.spec.clone() {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                let g = window(&item_in, &item_out, kernel, stride, padding);
                let out = conv_forward(input, &self.params[0], &self.params[1], &g, &out_shape);
                (out, Saved::Input(input.clone()))
            }
            LayerSpec::ConvTranspose2d {
                kernel,
                stride,
                padding,
                ..
            } => {
                // The window sweeps the (larger) output and lands on the input grid.
                let g = window(&item_out, &item_in, kernel, stride, padding);
                let out = conv_transpose_forward(input, &self.params[0], &self.params[1], &g, &out_shape);
                (out, Saved::Input(input.clone()))
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let mut out = Tensor::zeros(&out_shape);
                {
                    let o = out.data_mut();
                    for row in o.chunks_mut(out_features) {
                        row.copy_from_slice(self.params[1].data());
                    }
                    gemm(
                        n,
                        in_features,
                        out_features,
                        E::one(),
                        input.data(),
                        false,
                        self.params[0].data(),
                        true,
                        E::one(),
                        o,
                    );
                }
                (out, Saved::Input(input.clone()))
            }
            LayerSpec::BatchNorm2d { channels } => {
                let (out, saved, batch_stats) = self.batchnorm_forward(input, channels, mode, &out_shape);
                stats = batch_stats;
                (out, saved)
            }
            LayerSpec::ReLU => {
                let data = input.data().iter().map(|&v| v.max(E::zero())).collect();
                let out = Tensor::new(out_shape.clone(), data)?;
                (out.clone(), Saved::Output(out))
            }
            LayerSpec::Sigmoid => {
                let data = input.data().iter().map(|&v| sigmoid(v)).collect();
                let out = Tensor::new(out_shape.clone(), data)?;
                (out.clone(), Saved::Output(out))
            }
            LayerSpec::Dropout { p } => match (mode, rng) {
                (Mode::Train, Some(rng)) if p > 0.0 => {
                    let keep = 1.0 - p;
                    let mask: Vec<E> = (0..input.len())
                        .map(|_| {
                            if rng.random::<f32>() < keep {
                                E::of_f32(1.0 / keep)
                            } else {
                                E::zero()
                            }
                        })
                        .collect();
                    let data = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                    (Tensor::new(out_shape.clone(), data)?, Saved::Mask(mask))
                }
                _ => (input.clone(), Saved::None),
            },
            LayerSpec::MaxPool2d { size } => {
                let (out, idx) = maxpool_forward(input, size, &item_in, &out_shape);
                (out, Saved::Argmax(idx))
            }
            LayerSpec::Reshape { .. } => (input.clone().reshape(&out_shape)?, Saved::None),
        };
        let cache = Cache {
            spec: self.spec.clone(),
            input_shape: input.shape().to_vec(),
            output_shape: out_shape,
            saved,
        };
        Ok((out, cache, stats))
    }

    /// Gradient of the forward map: returns `(grad_input, grad_params)` with
    /// `grad_params` aligned to [`Layer::params`].
    pub fn backward(&self, cache: &Cache<E>, grad_output: &Tensor<E>) -> Result<(Tensor<E>, Vec<Tensor<E>>), NnError> {
        if cache.spec != self.spec {
            return Err(NnError::StaleCache(format!(
                "cache recorded for {:?}, layer is {:?}",
                cache.spec, self.spec
            )));
        }
        grad_output.ensure_shape("Layer::backward grad_output", &cache.output_shape)?;
        let in_shape = &cache.input_shape;
        let n = in_shape[0];
        match (&self.spec, &cache.saved) {
            (
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                },
                Saved::Input(x),
            ) => {
                let g = window(&in_shape[1..], &cache.output_shape[1..], *kernel, *stride, *padding);
                Ok(conv_backward(x, &self.params[0], grad_output, &g))
            }
            (
                LayerSpec::ConvTranspose2d {
                    kernel,
                    stride,
                    padding,
                    ..
                },
                Saved::Input(x),
            ) => {
                let g = window(&cache.output_shape[1..], &in_shape[1..], *kernel, *stride, *padding);
                Ok(conv_transpose_backward(x, &self.params[0], grad_output, &g))
            }
            (
                LayerSpec::Dense {
                    in_features,
                    out_features,
                },
                Saved::Input(x),
            ) => {
                let (fi, fo) = (*in_features, *out_features);
                let mut gx = Tensor::zeros(in_shape);
                gemm(
                    n,
                    fo,
                    fi,
                    E::one(),
                    grad_output.data(),
                    false,
                    self.params[0].data(),
                    false,
                    E::zero(),
                    gx.data_mut(),
                );
                let mut gw = Tensor::zeros(&[fo, fi]);
                gemm(
                    fo,
                    n,
                    fi,
                    E::one(),
                    grad_output.data(),
                    true,
                    x.data(),
                    false,
                    E::zero(),
                    gw.data_mut(),
                );
                let mut gb = vec![0.0f64; fo];
                for row in grad_output.data().chunks(fo) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc += v.as_f64();
                    }
                }
                let gb = Tensor::new(vec![fo], gb.into_iter().map(E::of_f64).collect())?;
                Ok((gx, vec![gw, gb]))
            }
            (LayerSpec::BatchNorm2d { channels }, Saved::Norm { x_hat, inv_std, train }) => {
                Ok(self.batchnorm_backward(*channels, in_shape, x_hat, inv_std, *train, grad_output))
            }
            (LayerSpec::ReLU, Saved::Output(y)) => {
                let data = grad_output
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &o)| if o > E::zero() { g } else { E::zero() })
                    .collect();
                Ok((Tensor::new(in_shape.clone(), data)?, Vec::new()))
            }
            (LayerSpec::Sigmoid, Saved::Output(y)) => {
                let data = grad_output
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&g, &o)| g * o * (E::one() - o))
                    .collect();
                Ok((Tensor::new(in_shape.clone(), data)?, Vec::new()))
            }
            (LayerSpec::Dropout { .. }, Saved::Mask(mask)) => {
                let data = grad_output.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Ok((Tensor::new(in_shape.clone(), data)?, Vec::new()))
            }
            (LayerSpec::Dropout { .. }, Saved::None) | (LayerSpec::Reshape { .. }, Saved::None) => {
                Ok((grad_output.clone().reshape(in_shape)?, Vec::new()))
            }
            (LayerSpec::MaxPool2d { .. }, Saved::Argmax(idx)) => {
                let mut gx = Tensor::zeros(in_shape);
                let d = gx.data_mut();
                for (&i, &g) in idx.iter().zip(grad_output.data()) {
                    d[i] += g;
                }
                Ok((gx, Vec::new()))
            }
            _ => Err(NnError::StaleCache(format!(
                "cache contents do not match {:?}",
                self.spec
            ))),
        }
    }

    #[allow(clippy::type_complexity)]
    fn batchnorm_forward(
        &self,
        input: &Tensor<E>,
        channels: usize,
        mode: Mode,
        out_shape: &[usize],
    ) -> (Tensor<E>, Saved<E>, Option<(Vec<f64>, Vec<f64>, f64)>) {
        let n = input.batch();
        let plane = input.item_len() / channels;
        let count = (n * plane) as f64;
        let x = input.data();
        let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
            Mode::Train => (0..channels)
                .map(|c| {
                    let mut s = 0.0f64;
                    let mut s2 = 0.0f64;
                    for b in 0..n {
                        let start = (b * channels + c) * plane;
                        for &v in &x[start..start + plane] {
                            s += v.as_f64();
                        }
                    }
                    let m = s / count;
                    for b in 0..n {
                        let start = (b * channels + c) * plane;
                        for &v in &x[start..start + plane] {
                            s2 += (v.as_f64() - m).powi(2);
                        }
                    }
                    (m, s2 / count)
                })
                .unzip(),
            Mode::Eval => (
                self.buffers[0].data().iter().map(|&v| v.as_f64()).collect(),
                self.buffers[1].data().iter().map(|&v| v.as_f64()).collect(),
            ),
        };
        let inv_std: Vec<E> = var.iter().map(|&v| E::of_f64(1.0 / (v + BN_EPS as f64).sqrt())).collect();
        let gamma = self.params[0].data();
        let beta = self.params[1].data();
        let mut x_hat = vec![E::zero(); x.len()];
        let mut out = vec![E::zero(); x.len()];
        for b in 0..n {
            for c in 0..channels {
                let start = (b * channels + c) * plane;
                let m = E::of_f64(mean[c]);
                for i in start..start + plane {
                    let h = (x[i] - m) * inv_std[c];
                    x_hat[i] = h;
                    out[i] = gamma[c] * h + beta[c];
                }
            }
        }
        let out = Tensor::new(out_shape.to_vec(), out).expect("batch-norm output shape");
        let saved = Saved::Norm {
            x_hat,
            inv_std,
            train: mode == Mode::Train,
        };
        let stats = (mode == Mode::Train).then(|| (mean, var, count));
        (out, saved, stats)
    }

    fn batchnorm_backward(
        &self,
        channels: usize,
        in_shape: &[usize],
        x_hat: &[E],
        inv_std: &[E],
        train: bool,
        grad_output: &Tensor<E>,
    ) -> (Tensor<E>, Vec<Tensor<E>>) {
        let n = in_shape[0];
        let plane: usize = in_shape[2..].iter().product();
        let count = (n * plane) as f64;
        let gy = grad_output.data();
        let gamma = self.params[0].data();
        let mut dgamma = vec![0.0f64; channels];
        let mut dbeta = vec![0.0f64; channels];
        for b in 0..n {
            for c in 0..channels {
                let start = (b * channels + c) * plane;
                for i in start..start + plane {
                    dbeta[c] += gy[i].as_f64();
                    dgamma[c] += gy[i].as_f64() * x_hat[i].as_f64();
                }
            }
        }
        let mut gx = vec![E::zero(); gy.len()];
        for b in 0..n {
            for c in 0..channels {
                let start = (b * channels + c) * plane;
                let scale = gamma[c] * inv_std[c];
                if train {
                    let mb = E::of_f64(dbeta[c] / count);
                    let mg = E::of_f64(dgamma[c] / count);
                    for i in start..start + plane {
                        gx[i] = scale * (gy[i] - mb - x_hat[i] * mg);
                    }
                } else {
                    for i in start..start + plane {
                        gx[i] = scale * gy[i];
                    }
                }
            }
        }
        let to_t = |v: Vec<f64>| Tensor::new(vec![channels], v.into_iter().map(E::of_f64).collect()).unwrap();
        (
            Tensor::new(in_shape.to_vec(), gx).unwrap(),
            vec![to_t(dgamma), to_t(dbeta)],
        )
    }
}

pub(crate) fn sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

fn window(big: &[usize], small: &[usize], kernel: usize, stride: usize, padding: usize) -> Window {
    Window {
        channels: big[0],
        height: big[1],
        width: big[2],
        kernel,
        stride,
        padding,
        out_height: small[1],
        out_width: small[2],
    }
}

fn conv_forward<E: Element>(x: &Tensor<E>, w: &Tensor<E>, b: &Tensor<E>, g: &Window, out_shape: &[usize]) -> Tensor<E> {
    let n = x.batch();
    let co = out_shape[1];
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![E::zero(); rows * ncols];
    let mut out = Tensor::zeros(out_shape);
    let in_len = x.item_len();
    let out_len = co * ncols;
    for s in 0..n {
        im2col(&x.data()[s * in_len..(s + 1) * in_len], g, &mut cols);
        let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        for (c, row) in dst.chunks_mut(ncols).enumerate() {
            row.fill(b.data()[c]);
        }
        gemm(co, rows, ncols, E::one(), w.data(), false, &cols, false, E::one(), dst);
    }
    out
}

fn conv_backward<E: Element>(x: &Tensor<E>, w: &Tensor<E>, gy: &Tensor<E>, g: &Window) -> (Tensor<E>, Vec<Tensor<E>>) {
    let n = x.batch();
    let co = gy.shape()[1];
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![E::zero(); rows * ncols];
    let mut dcols = vec![E::zero(); rows * ncols];
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let mut gb = vec![0.0f64; co];
    let in_len = x.item_len();
    let out_len = co * ncols;
    for s in 0..n {
        let gys = &gy.data()[s * out_len..(s + 1) * out_len];
        im2col(&x.data()[s * in_len..(s + 1) * in_len], g, &mut cols);
        gemm(co, ncols, rows, E::one(), gys, false, &cols, true, E::one(), gw.data_mut());
        gemm(rows, co, ncols, E::one(), w.data(), true, gys, false, E::zero(), &mut dcols);
        col2im(&dcols, g, &mut gx.data_mut()[s * in_len..(s + 1) * in_len]);
        for (c, row) in gys.chunks(ncols).enumerate() {
            gb[c] += row.iter().map(|&v| v.as_f64()).sum::<f64>();
        }
    }
    let gb = Tensor::new(vec![co], gb.into_iter().map(E::of_f64).collect()).unwrap();
    (gx, vec![gw, gb])
}

fn conv_transpose_forward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: &Tensor<E>,
    g: &Window,
    out_shape: &[usize],
) -> Tensor<E> {
    let n = x.batch();
    let ci = x.shape()[1];
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![E::zero(); rows * ncols];
    let mut out = Tensor::zeros(out_shape);
    let in_len = x.item_len();
    let out_len: usize = out_shape[1..].iter().product();
    let plane = out_len / g.channels;
    for s in 0..n {
        gemm(
            rows,
            ci,
            ncols,
            E::one(),
            w.data(),
            true,
            &x.data()[s * in_len..(s + 1) * in_len],
            false,
            E::zero(),
            &mut cols,
        );
        let dst = &mut out.data_mut()[s * out_len..(s + 1) * out_len];
        for (c, p) in dst.chunks_mut(plane).enumerate() {
            p.fill(b.data()[c]);
        }
        col2im(&cols, g, dst);
    }
    out
}

fn conv_transpose_backward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gy: &Tensor<E>,
    g: &Window,
) -> (Tensor<E>, Vec<Tensor<E>>) {
    let n = x.batch();
    let ci = x.shape()[1];
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![E::zero(); rows * ncols];
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    let co = g.channels;
    let mut gb = vec![0.0f64; co];
    let in_len = x.item_len();
    let out_len: usize = gy.item_len();
    let plane = out_len / co;
    for s in 0..n {
        let gys = &gy.data()[s * out_len..(s + 1) * out_len];
        im2col(gys, g, &mut cols);
        let xs = &x.data()[s * in_len..(s + 1) * in_len];
        gemm(
            ci,
            rows,
            ncols,
            E::one(),
            w.data(),
            false,
            &cols,
            false,
            E::zero(),
            &mut gx.data_mut()[s * in_len..(s + 1) * in_len],
        );
        gemm(ci, ncols, rows, E::one(), xs, false, &cols, true, E::one(), gw.data_mut());
        for (c, p) in gys.chunks(plane).enumerate() {
            gb[c] += p.iter().map(|&v| v.as_f64()).sum::<f64>();
        }
    }
    let gb = Tensor::new(vec![co], gb.into_iter().map(E::of_f64).collect()).unwrap();
    (gx, vec![gw, gb])
}

fn maxpool_forward<E: Element>(
    x: &Tensor<E>,
    size: usize,
    item_in: &[usize],
    out_shape: &[usize],
) -> (Tensor<E>, Vec<usize>) {
    let (c, h, w) = (item_in[0], item_in[1], item_in[2]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let n = x.batch();
    let mut out = Tensor::zeros(out_shape);
    let mut idx = vec![0usize; out.len()];
    let xd = x.data();
    let od = out.data_mut();
    let mut o = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = E::neg_infinity();
                    let mut at = base + oy * size * w + ox * size;
                    for ky in 0..size {
                        for kx in 0..size {
                            let i = base + (oy * size + ky) * w + ox * size + kx;
                            if xd[i] > best {
                                best = xd[i];
                                at = i;
                            }
                        }
                    }
                    od[o] = best;
                    idx[o] = at;
                    o += 1;
                }
            }
        }
    }
    (out, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn conv(i: usize, o: usize, k: usize, stride: usize, padding: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride,
            padding,
        }
    }

    /// Six nested loops over batch, output channel, output pixel and window.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
        let [b, ci, h, wd] = *x.shape() else { panic!() };
        let [co, _, k, _] = *w.shape() else { panic!() };
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * co * ho * wo];
        for n in 0..b {
            for o in 0..co {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut s = bias.data()[o];
                        for c in 0..ci {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        s += x.data()[((n * ci + c) * h + iy as usize) * wd + ix as usize]
                                            * w.data()[((o * ci + c) * k + ky) * k + kx];
                                    }
                                }
                            }
                        }
                        out[((n * co + o) * ho + oy) * wo + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut layer = Layer::<f32>::zeroed(conv(1, 1, 3, 1, 1)).unwrap();
        layer.params[0].data_mut()[4] = 1.0;
        let x = Tensor::<f32>::randn(&[2, 1, 6, 5], 1.0, &mut rng());
        assert_eq!(layer.infer(&x).unwrap(), x);
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        let mut r = rng();
        for (stride, pad) in [(1, 0), (1, 2), (2, 2)] {
            let layer = Layer::<f32>::new(conv(2, 3, 5, stride, pad), &mut r).unwrap();
            let mut layer = layer;
            layer.params[1] = Tensor::randn(&[3], 0.5, &mut r);
            let x = Tensor::<f32>::randn(&[2, 2, 8, 8], 1.0, &mut r);
            let got = layer.infer(&x).unwrap();
            let want = conv_oracle(&x.cast(), &layer.params[0].cast(), &layer.params[1].cast(), stride, pad);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.data().iter().zip(&want) {
                assert!((*g as f64 - w).abs() <= 1e-5 * (1.0 + w.abs()), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn transposed_conv_is_the_adjoint_of_conv() {
        let mut r = rng();
        let (i, o, k, s, p) = (3, 4, 5, 2, 2);
        let mut c = Layer::<f64>::new(conv(i, o, k, s, p), &mut r).unwrap();
        let t_spec = LayerSpec::ConvTranspose2d {
            in_channels: o,
            out_channels: i,
            kernel: k,
            stride: s,
            padding: p,
            output_padding: 1,
        };
        let mut t = Layer::<f64>::zeroed(t_spec).unwrap();
        t.params[0] = c.params[0].clone().reshape(&[o, i, k, k]).unwrap();
        c.params[1] = Tensor::zeros(&[o]);
        let x = Tensor::<f32>::randn(&[2, i, 8, 8], 1.0, &mut r).cast::<f64>();
        let y = Tensor::<f32>::randn(&[2, o, 4, 4], 1.0, &mut r).cast::<f64>();
        let cx = c.infer(&x).unwrap();
        let ty = t.infer(&y).unwrap();
        assert_eq!(ty.shape(), x.shape());
        assert!((cx.dot(&y) - x.dot(&ty)).abs() < 1e-4);
    }

    #[test]
    fn relu_forward_and_backward() {
        let mut layer = Layer::<f64>::new(LayerSpec::ReLU, &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let (y, cache) = layer.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let (g, _) = layer.backward(&cache, &Tensor::filled(&[1, 3], 1.0)).unwrap();
        assert_eq!(g.data()[0], 0.0);
        assert_eq!(g.data()[2], 1.0);
    }

    #[test]
    fn dense_zero_grad_gives_zero_grads() {
        let spec = LayerSpec::Dense {
            in_features: 6,
            out_features: 3,
        };
        let mut layer = Layer::<f64>::new(spec, &mut rng()).unwrap();
        let x = Tensor::<f32>::randn(&[4, 6], 1.0, &mut rng()).cast();
        let (_, cache) = layer.forward(&x, Mode::Train, &mut rng()).unwrap();
        let (gx, gp) = layer.backward(&cache, &Tensor::zeros(&[4, 3])).unwrap();
        assert!(gx.data().iter().chain(gp.iter().flat_map(|t| t.data())).all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_is_identity_in_eval_and_rescales_in_train() {
        let mut layer = Layer::<f32>::new(LayerSpec::Dropout { p: 0.5 }, &mut rng()).unwrap();
        let x = Tensor::filled(&[1, 1000], 1.0f32);
        assert_eq!(layer.infer(&x).unwrap(), x);
        let (y, _) = layer.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn batchnorm_eval_uses_running_statistics() {
        let mut layer = Layer::<f64>::new(LayerSpec::BatchNorm2d { channels: 1 }, &mut rng()).unwrap();
        layer.buffers[0].data_mut()[0] = 2.0;
        layer.buffers[1].data_mut()[0] = 4.0;
        let x = Tensor::new(vec![1, 1, 1, 2], vec![2.0, 6.0]).unwrap();
        let y = layer.infer(&x).unwrap();
        let s = (4.0 + BN_EPS as f64).sqrt();
        assert!((y.data()[0]).abs() < 1e-12 && (y.data()[1] - 4.0 / s).abs() < 1e-6);
        let (yt, _) = layer.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert!((yt.data()[0] + yt.data()[1]).abs() < 1e-9);
        assert!(layer.buffers[0].data()[0] != 2.0);
    }

    #[test]
    fn maxpool_and_sigmoid() {
        let mut pool = Layer::<f64>::new(LayerSpec::MaxPool2d { size: 2 }, &mut rng()).unwrap();
        let x = Tensor::new(vec![1, 1, 2, 4], vec![1.0, 5.0, -1.0, 0.0, 3.0, 2.0, -4.0, -2.0]).unwrap();
        let (y, cache) = pool.forward(&x, Mode::Train, &mut rng()).unwrap();
        assert_eq!(y.data(), &[5.0, 0.0]);
        let (g, _) = pool.backward(&cache, &Tensor::filled(&[1, 1, 1, 2], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let sig = Layer::<f64>::new(LayerSpec::Sigmoid, &mut rng()).unwrap();
        let y = sig.infer(&Tensor::new(vec![1, 3], vec![-50.0, 0.0, 50.0]).unwrap()).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(y.data()[1], 0.5);
    }

    #[test]
    fn shape_errors_name_expected_and_got() {
        let layer = Layer::<f32>::new(conv(2, 3, 3, 1, 1), &mut rng()).unwrap();
        let err = layer.infer(&Tensor::zeros(&[1, 1, 8, 8])).unwrap_err().to_string();
        assert!(err.contains("expected") && err.contains("got"), "{err}");
        assert!(LayerSpec::Dropout { p: 1.0 }.validate().is_err());
        assert!(conv(1, 1, 0, 1, 0).validate().is_err());
        assert!(conv(1, 1, 3, 0, 0).validate().is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut a = Layer::<f64>::new(conv(1, 2, 3, 1, 1), &mut rng()).unwrap();
        let b = Layer::<f64>::new(LayerSpec::ReLU, &mut rng()).unwrap();
        let (y, cache) = a.forward(&Tensor::zeros(&[1, 1, 4, 4]), Mode::Train, &mut rng()).unwrap();
        assert!(b.backward(&cache, &y).is_err());
    }
}
