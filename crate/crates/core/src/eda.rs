//! Summary statistics over height/width measurements: grouped quartiles,
//! Pearson correlation, Gaussian KDE and the portrait fraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::PeriodTaxonomy;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EdaError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

/// Quantile of sorted data by linear interpolation between order
/// statistics at position `p * (n - 1)`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// One row per group, ordered by taxonomy position (when given) and then by name.
pub fn ratio_stats_by_group<G: AsRef<str>>(
    measures: &[(G, f64)],
    taxonomy: Option<&PeriodTaxonomy>,
) -> Result<Vec<RatioStats>, EdaError> {
    if measures.is_empty() {
        return Err(EdaError::Empty("ratio measurements"));
    }
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (g, r) in measures {
        if !r.is_finite() {
            return Err(EdaError::NonFinite);
        }
        groups.entry(g.as_ref()).or_default().push(*r);
    }
    let mut rows: Vec<RatioStats> = groups
        .into_iter()
        .map(|(g, mut v)| {
            v.sort_by(f64::total_cmp);
            RatioStats {
                group: g.to_string(),
                n: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile_sorted(&v, 0.5),
                q1: quantile_sorted(&v, 0.25),
                q3: quantile_sorted(&v, 0.75),
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect();
    if let Some(t) = taxonomy {
        // stable: ties keep alphabetical order
        rows.sort_by_key(|r| t.order_of(&r.group));
    }
    Ok(rows)
}

/// Sample Pearson correlation. `Ok(None)` when either input is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, EdaError> {
    if xs.len() != ys.len() {
        return Err(EdaError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EdaError::TooFew { needed: 2, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(EdaError::NonFinite);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub group: String,
    /// `None` when undefined (constant heights or widths, or fewer than 2 rows).
    pub r: Option<f64>,
    pub n: usize,
}

/// Pearson correlation of height against width within each group.
pub fn pearson_by_group<G: AsRef<str>>(rows: &[(G, f64, f64)], taxonomy: Option<&PeriodTaxonomy>) -> Vec<CorrelationRow> {
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (g, h, w) in rows {
        let e = groups.entry(g.as_ref()).or_default();
        e.0.push(*h);
        e.1.push(*w);
    }
    let mut out: Vec<CorrelationRow> = groups
        .into_iter()
        .map(|(g, (h, w))| CorrelationRow {
            group: g.to_string(),
            r: pearson(&h, &w).ok().flatten(),
            n: h.len(),
        })
        .collect();
    if let Some(t) = taxonomy {
        out.sort_by_key(|r| t.order_of(&r.group));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeSeries {
    pub group: String,
    pub xs: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman's rule of thumb, `1.06 * s * n^(-1/5)` with the sample standard deviation.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64, EdaError> {
    if values.len() < 2 {
        return Err(EdaError::TooFew { needed: 2, got: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(EdaError::ZeroVariance);
    }
    Ok(1.06 * var.sqrt() * n.powf(-0.2))
}

/// Gaussian KDE on `grid_points` evenly spaced points over `[min - 3h, max + 3h]`.
pub fn kde(group: &str, values: &[f64], grid_points: usize) -> Result<KdeSeries, EdaError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EdaError::NonFinite);
    }
    let h = silverman_bandwidth(values)?;
    if grid_points < 2 {
        return Err(EdaError::TooFew { needed: 2, got: grid_points });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = (min - 3.0 * h, max + 3.0 * h);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..grid_points).map(|i| lo + i as f64 * step).collect();
    let density = xs
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| {
                    let u = (x - v) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    Ok(KdeSeries {
        group: group.to_string(),
        xs,
        density,
        bandwidth: h,
    })
}

/// Trapezoidal integral of a KDE series.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Fraction of ratios strictly above 1 (taller than wide).
pub fn portrait_fraction(ratios: &[f64]) -> Result<f64, EdaError> {
    if ratios.is_empty() {
        return Err(EdaError::Empty("ratios"));
    }
    Ok(ratios.iter().filter(|&&r| r > 1.0).count() as f64 / ratios.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn quartiles() {
        let s = ratio_stats_by_group(&[("a", 1.0), ("a", 1.0), ("a", 1.0)], None).unwrap();
        assert_eq!((s[0].mean, s[0].median, s[0].q1, s[0].q3), (1.0, 1.0, 1.0, 1.0));
        let s = ratio_stats_by_group(&[("g", 4.0), ("g", 1.0), ("g", 3.0), ("g", 2.0)], None).unwrap();
        assert_eq!((s[0].median, s[0].q1, s[0].q3), (2.5, 1.75, 3.25));
        assert_eq!((s[0].min, s[0].max), (1.0, 4.0));
    }

    #[test]
    fn groups_follow_taxonomy_order() {
        let t = PeriodTaxonomy::builtin();
        let m = [("Neo-Assyrian", 1.0), ("Ur III", 2.0), ("Zzz", 1.0), ("Aaa", 1.5)];
        let names: Vec<String> = ratio_stats_by_group(&m, Some(&t)).unwrap().into_iter().map(|r| r.group).collect();
        assert_eq!(names, ["Ur III", "Neo-Assyrian", "Aaa", "Zzz"]);
        assert!(ratio_stats_by_group::<&str>(&[], None).is_err());
    }

    #[test]
    fn pearson_extremes() {
        let x = [1.0, 2.0, 5.0, 7.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &x).unwrap(), Some(1.0));
        assert_eq!(pearson(&x, &neg).unwrap(), Some(-1.0));
        assert_eq!(pearson(&x, &[3.0; 4]).unwrap(), None);
        assert!(pearson(&x, &x[..3]).is_err());
        assert!(pearson(&x[..1], &x[..1]).is_err());
    }

    #[test]
    fn pearson_matches_raw_moment_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..100).map(|_| nd.sample(&mut rng)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.6 * x + nd.sample(&mut rng)).collect();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
        let sxx: f64 = xs.iter().map(|a| a * a).sum();
        let syy: f64 = ys.iter().map(|a| a * a).sum();
        let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((pearson(&xs, &ys).unwrap().unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn kde_rejects_degenerate() {
        assert_eq!(kde("g", &[0.0, 0.0], 16), Err(EdaError::ZeroVariance));
        assert!(kde("g", &[0.0], 16).is_err());
    }

    #[test]
    fn kde_standard_normal_peak() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nd = Normal::new(0.0, 1.0).unwrap();
        let v: Vec<f64> = (0..10_000).map(|_| nd.sample(&mut rng)).collect();
        let s = kde("n", &v, 401).unwrap();
        let i0 = s.xs.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
        let target = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((s.density[i0] - target).abs() < 0.1 * target);
        assert!((trapezoid(&s.xs, &s.density) - 1.0).abs() < 1e-2);
    }

    #[test]
    fn portrait() {
        assert_eq!(portrait_fraction(&[2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(portrait_fraction(&[0.5, 2.0]).unwrap(), 0.5);
        assert_eq!(portrait_fraction(&[1.0]).unwrap(), 0.0);
        assert!(portrait_fraction(&[]).is_err());
    }

    #[test]
    fn portrait_fraction_of_tall_population() {
        // mean 1.4, sd 0.1: P(r <= 1) is a 4-sigma tail
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let nd = Normal::new(1.4, 0.1).unwrap();
        let v: Vec<f64> = (0..1000).map(|_| nd.sample(&mut rng)).collect();
        assert!(portrait_fraction(&v).unwrap() > 0.95);
    }

    proptest::proptest! {
        #[test]
        fn pearson_symmetric_and_affine_invariant(
            pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40),
            a in 0.1f64..10.0,
            b in -20.0f64..20.0,
        ) {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let r = pearson(&xs, &ys).unwrap();
            proptest::prop_assert_eq!(r, pearson(&ys, &xs).unwrap());
            if let Some(r) = r {
                let ax: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let r2 = pearson(&ax, &ys).unwrap().unwrap();
                proptest::prop_assert!((r - r2).abs() < 1e-12);
            }
        }

        #[test]
        fn stats_are_ordered_and_total(values in proptest::collection::vec((0usize..3, 0.1f64..5.0), 1..60)) {
            let m: Vec<(String, f64)> = values.iter().map(|(g, r)| (format!("g{g}"), *r)).collect();
            let rows = ratio_stats_by_group(&m, None).unwrap();
            proptest::prop_assert_eq!(rows.iter().map(|r| r.n).sum::<usize>(), m.len());
            for r in rows {
                proptest::prop_assert!(r.min <= r.q1 && r.q1 <= r.median && r.median <= r.q3 && r.q3 <= r.max);
            }
        }

        #[test]
        fn kde_normalised_and_translation_equivariant(
            values in proptest::collection::vec(-5.0f64..5.0, 2..30),
            shift in -8i32..8,
        ) {
            proptest::prop_assume!(silverman_bandwidth(&values).is_ok());
            let c = shift as f64 * 0.5;
            let s = kde("a", &values, 256).unwrap();
            proptest::prop_assert!(s.density.iter().all(|&d| d >= 0.0));
            proptest::prop_assert!((trapezoid(&s.xs, &s.density) - 1.0).abs() < 1e-2);
            let moved: Vec<f64> = values.iter().map(|v| v + c).collect();
            let t = kde("a", &moved, 256).unwrap();
            for i in 0..s.xs.len() {
                proptest::prop_assert!((t.xs[i] - s.xs[i] - c).abs() < 1e-12);
                proptest::prop_assert!((t.density[i] - s.density[i]).abs() < 1e-12);
            }
        }
    }
}
