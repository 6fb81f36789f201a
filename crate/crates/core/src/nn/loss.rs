//! Losses used by the classifiers and the VAE. Values are accumulated in f64.

use serde::{Deserialize, Serialize};

use super::{Element, NnError, Tensor};

/// Mean squared error over every element; gradient `2 (p - t) / N`.
pub fn mse<E: Element>(prediction: &Tensor<E>, target: &Tensor<E>) -> Result<(f64, Tensor<E>), NnError> {
    target.ensure_shape("mse target", prediction.shape())?;
    let n = prediction.len().max(1) as f64;
    let mut sum = 0.0f64;
    let grad: Vec<E> = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            sum += d * d;
            E::of_f64(2.0 * d / n)
        })
        .collect();
    Ok((sum / n, Tensor::new(prediction.shape().to_vec(), grad)?))
}

/// Gradients of [`kl_standard_normal`] with respect to `mu` and `logvar`.
#[derive(Clone, Debug)]
pub struct KlGrad<E: Element = f32> {
    pub mu: Tensor<E>,
    pub logvar: Tensor<E>,
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, I)`, summed over the
/// latent axis and averaged over the batch:
/// `mean_b -1/2 sum_d (1 + logvar - mu^2 - exp(logvar))`.
pub fn kl_standard_normal<E: Element>(mu: &Tensor<E>, logvar: &Tensor<E>) -> Result<(f64, KlGrad<E>), NnError> {
    logvar.ensure_shape("kl logvar", mu.shape())?;
    let batch = mu.batch().max(1) as f64;
    let mut sum = 0.0f64;
    let mut gmu = Vec::with_capacity(mu.len());
    let mut glv = Vec::with_capacity(mu.len());
    for (&m, &lv) in mu.data().iter().zip(logvar.data()) {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        let e = lv.exp();
        sum += -0.5 * (1.0 + lv - m * m - e);
        gmu.push(E::of_f64(m / batch));
        glv.push(E::of_f64(-0.5 * (1.0 - e) / batch));
    }
    Ok((
        sum / batch,
        KlGrad {
            mu: Tensor::new(mu.shape().to_vec(), gmu)?,
            logvar: Tensor::new(mu.shape().to_vec(), glv)?,
        },
    ))
}

/// Per-class loss weights, normalised to mean 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
        }
    }

    /// Weights inversely proportional to the class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self, NnError> {
        if counts.is_empty() {
            return Err(NnError::Empty("class counts"));
        }
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(NnError::InvalidArgument(format!("class {k} has zero samples")));
        }
        let raw: Vec<f64> = counts.iter().map(|&c| 1.0 / c as f64).collect();
        Self::normalized(raw)
    }

    /// Rescales arbitrary positive weights to mean 1.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, NnError> {
        if raw.is_empty() {
            return Err(NnError::Empty("class weights"));
        }
        if raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(NnError::InvalidArgument(
                "class weights must be positive and finite".into(),
            ));
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self {
            weights: raw.into_iter().map(|w| w / mean).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Row-wise softmax of a `[B, K]` tensor, computed in f64.
pub fn softmax_rows<E: Element>(logits: &Tensor<E>) -> Vec<Vec<f64>> {
    let k = logits.item_len().max(1);
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b.as_f64()));
            let exps: Vec<f64> = row.iter().map(|&v| (v.as_f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Softmax cross-entropy where each sample is scaled by its class weight and
/// the sum is divided by the total weight of the batch.
pub fn weighted_cross_entropy<E: Element>(
    logits: &Tensor<E>,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<(f64, Tensor<E>), NnError> {
    let [b, k] = *logits.shape() else {
        return Err(NnError::Shape {
            context: "weighted_cross_entropy logits",
            expected: "[B, K]".into(),
            got: format!("{:?}", logits.shape()),
        });
    };
    if labels.len() != b {
        return Err(NnError::Shape {
            context: "weighted_cross_entropy labels",
            expected: format!("{b} labels"),
            got: format!("{}", labels.len()),
        });
    }
    if weights.len() != k {
        return Err(NnError::Shape {
            context: "weighted_cross_entropy weights",
            expected: format!("{k} class weights"),
            got: format!("{}", weights.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(NnError::InvalidArgument(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let probs = softmax_rows(logits);
    let w = weights.as_slice();
    let total: f64 = labels.iter().map(|&y| w[y]).sum();
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(b * k);
    for (p, &y) in probs.iter().zip(labels) {
        loss += -w[y] * p[y].max(f64::MIN_POSITIVE).ln();
        for (j, &pj) in p.iter().enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            grad.push(E::of_f64(w[y] * (pj - onehot) / total));
        }
    }
    Ok((loss / total, Tensor::new(vec![b, k], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = t(&[1, 2], &[0.3, -0.7]);
        assert_eq!(mse(&a, &a).unwrap().0, 0.0);
        let (v, g) = mse(&t(&[1, 2], &[1.0, 0.0]), &t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(g.data(), &[1.0, 0.0]);
        assert!(mse(&a, &t(&[2, 1], &[0.0, 0.0])).is_err());
    }

    #[test]
    fn mse_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p: Vec<f64> = (0..37).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q: Vec<f64> = (0..37).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut oracle = 0.0;
        for i in 0..37 {
            oracle += (p[i] - q[i]).powi(2);
        }
        oracle /= 37.0;
        let (v, _) = mse(&t(&[37], &p), &t(&[37], &q)).unwrap();
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_standard_normal(&t(&[1, 3], &[0.0; 3]), &t(&[1, 3], &[0.0; 3])).unwrap().0, 0.0);
        let (v, _) = kl_standard_normal(&t(&[1, 1], &[1.0]), &t(&[1, 1], &[0.0])).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let mu: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
            assert!(kl_standard_normal(&t(&[2, 4], &mu), &t(&[2, 4], &lv)).unwrap().0 >= 0.0);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let (v, _) = weighted_cross_entropy(&t(&[1, 4], &[0.0; 4]), &[2], &ClassWeights::uniform(4)).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let (v, _) = weighted_cross_entropy(&t(&[1, 3], &[60.0, 0.0, 0.0]), &[0], &ClassWeights::uniform(3)).unwrap();
        assert!(v < 1e-20);
        assert!(weighted_cross_entropy(&t(&[1, 3], &[0.0; 3]), &[3], &ClassWeights::uniform(3)).is_err());
    }

    #[test]
    fn weighting_divides_by_total_weight() {
        let w = ClassWeights::from_counts(&[10, 30]).unwrap();
        let logits = t(&[2, 2], &[0.4, -0.1, 1.0, 0.2]);
        let (v, _) = weighted_cross_entropy(&logits, &[0, 1], &w).unwrap();
        let p = softmax_rows(&logits);
        let oracle = -(1.5 * p[0][0].ln() + 0.5 * p[1][1].ln()) / 2.0;
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(ClassWeights::from_counts(&[10, 10]).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(ClassWeights::from_counts(&[10, 30]).unwrap().as_slice(), &[1.5, 0.5]);
        assert!(ClassWeights::from_counts(&[3, 0]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..60).map(|_| rng.random_range(-30.0..30.0)).collect();
        for row in softmax_rows(&Tensor::new(vec![12, 5], data).unwrap()) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    proptest::proptest! {
        #[test]
        fn class_weights_have_mean_one(counts in proptest::collection::vec(1usize..500, 1..12)) {
            let w = ClassWeights::from_counts(&counts).unwrap();
            let mean = w.as_slice().iter().sum::<f64>() / counts.len() as f64;
            proptest::prop_assert!((mean - 1.0).abs() < 1e-12);
            proptest::prop_assert!(w.as_slice().iter().all(|&x| x > 0.0));
        }
    }
}
