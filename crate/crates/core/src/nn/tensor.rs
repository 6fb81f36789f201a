use std::fmt::Debug;
use std::ops::AddAssign;

use rand::Rng;
use rand_distr::StandardNormal;

use super::NnError;

/// Scalar type a [`Tensor`] can hold. Models train in `f32`; `f64` exists so
/// the same layer code can be audited against finite differences.
pub trait Element: num_traits::Float + AddAssign + Default + Debug + Send + Sync + 'static {
    fn of_f64(v: f64) -> Self;
    fn of_f32(v: f32) -> Self;
    fn as_f64(self) -> f64;

    /// Strided `c = alpha * a * b + beta * c`.
    ///
    /// # Safety
    /// The pointers and strides must describe valid `m x k`, `k x n` and
    /// `m x n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }

    fn of_f32(v: f32) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Element for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }

    fn of_f32(v: f32) -> Self {
        v as f64
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense N-dimensional array, row-major, `f32` unless stated otherwise.
///
/// The first axis is the batch axis for every layer in [`crate::nn`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::Shape {
                context: "Tensor::new",
                expected: format!("{expected} elements for shape {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, E::zero())
    }

    pub fn filled(shape: &[usize], value: E) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// Gaussian entries with the given standard deviation, drawn in `f32`
    /// so every precision starts from the same values.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let e: f32 = rng.sample(StandardNormal);
                E::of_f32(e * std)
            })
            .collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(NnError::Shape {
                context: "Tensor::reshape",
                expected: format!("{} elements", self.data.len()),
                got: format!("shape {shape:?} ({n} elements)"),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Inner product accumulated in f64.
    pub fn dot(&self, other: &Tensor<E>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum()
    }

    /// Elementwise conversion to another precision.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| F::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of batch item `i` with a leading axis of length 1.
    pub fn item(&self, i: usize) -> Tensor<E> {
        let n = self.item_len();
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[i * n..(i + 1) * n].to_vec(),
        }
    }

    /// Concatenates tensors along the batch axis. All items must share trailing dims.
    pub fn stack(parts: &[Tensor<E>]) -> Result<Tensor<E>, NnError> {
        let first = parts.first().ok_or(NnError::Empty("Tensor::stack"))?;
        let tail = &first.shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut batch = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(NnError::Shape {
                    context: "Tensor::stack",
                    expected: format!("trailing dims {tail:?}"),
                    got: format!("{:?}", &p.shape[1..]),
                });
            }
            batch += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = batch;
        Ok(Tensor { shape, data })
    }

    pub(crate) fn ensure_shape(&self, context: &'static str, expected: &[usize]) -> Result<(), NnError> {
        if self.shape != expected {
            return Err(NnError::Shape {
                context,
                expected: format!("{expected:?}"),
                got: format!("{:?}", self.shape),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::zeros(&[4]).reshape(&[3]).is_err());
    }

    #[test]
    fn item_and_stack_are_inverse() {
        let t = Tensor::<f64>::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let items: Vec<_> = (0..3).map(|i| t.item(i)).collect();
        assert_eq!(items[1].data(), &[3.0, 4.0]);
        assert_eq!(Tensor::stack(&items).unwrap(), t);
        assert!(Tensor::stack(&[t.clone(), Tensor::zeros(&[1, 3])]).is_err());
    }

    #[test]
    fn cast_round_trips_f32_values() {
        let t = Tensor::<f32>::new(vec![3], vec![0.1, -2.5, 1e-7]).unwrap();
        assert_eq!(t.cast::<f64>().cast::<f32>(), t);
        assert!(!Tensor::<f32>::new(vec![1], vec![f32::NAN]).unwrap().is_finite());
    }
}
