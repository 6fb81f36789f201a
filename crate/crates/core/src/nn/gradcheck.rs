//! Central finite differences, used to audit every analytic gradient.
//!
//! Audits run in `f64`: with `f32` storage the rounding of each output is
//! comparable to the change a `1e-3` step produces.

use super::Element;

/// Step used by the gradient-check suite.
pub const FD_EPSILON: f64 = 1e-3;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const FD_FLOOR: f64 = 1e-2;

/// Central-difference estimate of `d f / d x_i` for every coordinate.
///
/// `f` is evaluated at `x ± eps e_i`; `x` is restored afterwards.
pub fn numeric_gradient<E, F>(x: &mut [E], eps: f64, mut f: F) -> Vec<f64>
where
    E: Element,
    F: FnMut(&[E]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = E::of_f64(orig.as_f64() + eps);
            let up_step = x[i].as_f64() - orig.as_f64();
            let fp = f(x);
            x[i] = E::of_f64(orig.as_f64() - eps);
            let down_step = orig.as_f64() - x[i].as_f64();
            let fm = f(x);
            x[i] = orig;
            // The element grid may not represent `orig ± eps` exactly.
            (fp - fm) / (up_step + down_step)
        })
        .collect()
}

/// `max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut x = vec![1.0f32, -2.0, 0.5];
        let g = numeric_gradient(&mut x, FD_EPSILON, |v| v.iter().map(|&a| (a as f64).powi(2)).sum());
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * *xi as f64).abs() < 1e-3);
        }
        assert_eq!(x, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn relative_error_uses_floor() {
        assert!((max_relative_error(&[1e-6], &[2e-6], 1e-2) - 1e-4).abs() < 1e-15);
        assert!((max_relative_error(&[2.0], &[1.0], 1e-2) - 0.5).abs() < 1e-12);
    }
}
