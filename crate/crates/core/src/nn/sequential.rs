use rand::{Rng, RngCore};

use super::{Cache, Element, Layer, LayerSpec, Mode, NnError, Tensor};

/// A stack of layers applied in order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<E: Element = f32> {
    pub layers: Vec<Layer<E>>,
}

impl<E: Element> Sequential<E> {
    pub fn new<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self, NnError> {
        let layers = specs
            .into_iter()
            .map(|s| Layer::new(s, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }

    /// Checks the stack composes for a per-item input shape and returns the
    /// per-item output shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |s, l| l.spec.output_shape(&s))
    }

    pub fn forward(
        &mut self,
        input: &Tensor<E>,
        mode: Mode,
        rng: &mut dyn RngCore,
    ) -> Result<(Tensor<E>, Vec<Cache<E>>), NnError> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&x, mode, rng)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Eval-mode pass through every layer without touching any state.
    pub fn infer(&self, input: &Tensor<E>) -> Result<Tensor<E>, NnError> {
        self.layers.iter().try_fold(input.clone(), |x, l| l.infer(&x))
    }

    /// Returns the input gradient and one gradient list per layer.
    #[allow(clippy::type_complexity)]
    pub fn backward(
        &self,
        caches: &[Cache<E>],
        grad_output: &Tensor<E>,
    ) -> Result<(Tensor<E>, Vec<Vec<Tensor<E>>>), NnError> {
        if caches.len() != self.layers.len() {
            return Err(NnError::StaleCache(format!(
                "{} caches for {} layers",
                caches.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        let mut g = grad_output.clone();
        for (i, (layer, cache)) in self.layers.iter().zip(caches).enumerate().rev() {
            let (gx, gp) = layer.backward(cache, &g)?;
            grads[i] = gp;
            g = gx;
        }
        Ok((g, grads))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<E>> {
        self.layers.iter_mut().flat_map(|l| l.params.iter_mut())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn cast<F: Element>(&self) -> Sequential<F> {
        Sequential {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }
}
