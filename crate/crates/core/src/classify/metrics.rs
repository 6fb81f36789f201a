use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::ClassifyError;

pub const OTHER_LABEL: &str = "Other (?)";

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, ClassifyError> {
        let k = labels.len();
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(ClassifyError::Input(format!("confusion matrix must be {k}x{k}")));
        }
        Ok(Self { labels, counts })
    }

    pub fn from_predictions(labels: Vec<String>, truth: &[usize], predicted: &[usize]) -> Result<Self, ClassifyError> {
        let k = labels.len();
        if truth.len() != predicted.len() {
            return Err(ClassifyError::Input(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(ClassifyError::Input(format!("label {} out of range for {k} classes", t.max(p))));
            }
            counts[t][p] += 1;
        }
        Ok(Self { labels, counts })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.len()).map(|k| self.counts[k][k]).sum();
        diag as f64 / self.total().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only a confusion matrix was available.
    pub auc_ovr: Option<f64>,
}

/// Scores for one evaluation run. Serialises to the metrics JSON layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<String, ClassScores>,
    #[serde(rename = "macro")]
    pub macro_scores: MacroScores,
    pub confusion: ConfusionMatrix,
    /// Zero-denominator cases that were scored 0, and other caveats.
    #[serde(default)]
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn with_auc(mut self, auc: &AucReport) -> Self {
        self.macro_scores.auc_ovr = auc.macro_auc;
        self.flags.extend(auc.flags.iter().cloned());
        self
    }

    /// Report JSON plus a `summary` object keyed by the usual table headings.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("plain data");
        let m = &self.macro_scores;
        v["summary"] = serde_json::json!({
            "Macro-Precision": m.precision,
            "Macro-Recall": m.recall,
            "Macro-OvR AUC": m.auc_ovr,
            "Macro-F1": m.f1,
        });
        v
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-class precision, recall and F1 and their unweighted means.
///
/// A class with no predictions (or no true samples) gets precision (or
/// recall) 0 and a flag; F1 is 0 when precision + recall is 0.
pub fn metrics_from_confusion(confusion: &ConfusionMatrix) -> Result<MetricsReport, ClassifyError> {
    let k = confusion.len();
    if k < 2 {
        return Err(ClassifyError::Input("metrics need at least 2 classes".into()));
    }
    if confusion.total() == 0 {
        return Err(ClassifyError::Input("confusion matrix is all zero".into()));
    }
    let mut per_class = BTreeMap::new();
    let mut flags = Vec::new();
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = confusion.counts[c][c];
        let label = &confusion.labels[c];
        let precision = ratio(tp, confusion.col_sum(c)).unwrap_or_else(|| {
            flags.push(format!("{label}: never predicted, precision set to 0"));
            0.0
        });
        let recall = ratio(tp, confusion.row_sum(c)).unwrap_or_else(|| {
            flags.push(format!("{label}: no true samples, recall set to 0"));
            0.0
        });
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        sp += precision;
        sr += recall;
        sf += f1;
        per_class.insert(
            label.clone(),
            ClassScores {
                precision,
                recall,
                f1,
                support: confusion.row_sum(c),
            },
        );
    }
    let kf = k as f64;
    Ok(MetricsReport {
        per_class,
        macro_scores: MacroScores {
            precision: sp / kf,
            recall: sr / kf,
            f1: sf / kf,
            auc_ovr: None,
        },
        confusion: confusion.clone(),
        flags,
    })
}

/// Convenience: confusion from predictions, then scores.
pub fn evaluate_predictions(
    labels: Vec<String>,
    truth: &[usize],
    predicted: &[usize],
) -> Result<MetricsReport, ClassifyError> {
    metrics_from_confusion(&ConfusionMatrix::from_predictions(labels, truth, predicted)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// `None` for classes absent from the labels (or the only class present).
    pub per_class: Vec<Option<f64>>,
    pub macro_auc: Option<f64>,
    pub flags: Vec<String>,
}

/// Midranks (1-based) of `values`; ties share the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            ranks[t] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-based AUC of `scores` for the positives in `is_pos`.
pub fn binary_auc(scores: &[f64], is_pos: &[bool]) -> Option<f64> {
    let n_pos = is_pos.iter().filter(|&&p| p).count();
    let n_neg = is_pos.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = midranks(scores);
    let r_pos: f64 = ranks.iter().zip(is_pos).filter(|(_, &p)| p).map(|(r, _)| r).sum();
    let u = r_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC over the columns of a `n x K` score table.
pub fn auc_macro_ovr(scores: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<AucReport, ClassifyError> {
    if scores.len() != labels.len() {
        return Err(ClassifyError::Input(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|r| r.len() != num_classes) || labels.iter().any(|&l| l >= num_classes) {
        return Err(ClassifyError::Input(format!("scores and labels must use {num_classes} classes")));
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut flags = Vec::new();
    for k in 0..num_classes {
        let col: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        let auc = binary_auc(&col, &pos);
        if auc.is_none() {
            flags.push(format!("class {k}: absent (or alone) in labels, excluded from AUC"));
        }
        per_class.push(auc);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(AucReport {
        per_class,
        macro_auc,
        flags,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RareAggregation {
    pub labels: Vec<String>,
    /// Original label to reported label, for every label seen.
    pub mapping: BTreeMap<String, String>,
    /// Fewer than two reported classes remain.
    pub degenerate: bool,
}

/// Maps every label with fewer than `min_count` occurrences to [`OTHER_LABEL`].
pub fn aggregate_rare_classes<S: AsRef<str>>(labels: &[S], min_count: usize) -> RareAggregation {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for l in labels {
        *counts.entry(l.as_ref()).or_default() += 1;
    }
    let mapping: BTreeMap<String, String> = counts
        .iter()
        .map(|(&l, &c)| {
            let to = if c < min_count { OTHER_LABEL } else { l };
            (l.to_string(), to.to_string())
        })
        .collect();
    let out: Vec<String> = labels.iter().map(|l| mapping[l.as_ref()].clone()).collect();
    let distinct: std::collections::BTreeSet<&String> = mapping.values().collect();
    RareAggregation {
        labels: out,
        degenerate: distinct.len() < 2,
        mapping,
    }
}

/// Scores probability rows against true class indices. Classes with fewer
/// than `min_count` true samples are reported together as [`OTHER_LABEL`]:
/// predictions are the argmax over the original classes mapped the same
/// way, and the merged class's AUC score is the sum of its members'
/// probabilities. `min_count = 0` disables the aggregation.
pub fn evaluate_scores(
    class_labels: &[String],
    truth: &[usize],
    probs: &[Vec<f64>],
    min_count: usize,
) -> Result<MetricsReport, ClassifyError> {
    let k = class_labels.len();
    if truth.len() != probs.len() || probs.iter().any(|r| r.len() != k) || truth.iter().any(|&t| t >= k) {
        return Err(ClassifyError::Input(format!(
            "need one {k}-class probability row and one label < {k} per sample"
        )));
    }
    let mut counts = vec![0usize; k];
    for &t in truth {
        counts[t] += 1;
    }
    let rare: Vec<bool> = counts.iter().map(|&c| c < min_count).collect();
    let mut reported: Vec<String> = Vec::new();
    let mut map = vec![0usize; k];
    for c in 0..k {
        if !rare[c] {
            map[c] = reported.len();
            reported.push(class_labels[c].clone());
        }
    }
    let merged: Vec<&String> = (0..k).filter(|&c| rare[c]).map(|c| &class_labels[c]).collect();
    if !merged.is_empty() {
        for c in (0..k).filter(|&c| rare[c]) {
            map[c] = reported.len();
        }
        reported.push(OTHER_LABEL.to_string());
    }
    let r = reported.len();
    if r < 2 {
        return Err(ClassifyError::Input("fewer than two classes remain after aggregation".into()));
    }
    let t: Vec<usize> = truth.iter().map(|&c| map[c]).collect();
    let p: Vec<usize> = probs.iter().map(|row| map[super::argmax(row)]).collect();
    let scores: Vec<Vec<f64>> = probs
        .iter()
        .map(|row| {
            let mut out = vec![0.0; r];
            for (c, &v) in row.iter().enumerate() {
                out[map[c]] += v;
            }
            out
        })
        .collect();
    let auc = auc_macro_ovr(&scores, &t, r)?;
    let mut report = evaluate_predictions(reported, &t, &p)?.with_auc(&auc);
    if !merged.is_empty() {
        let names: Vec<&str> = merged.iter().map(|s| s.as_str()).collect();
        report
            .flags
            .push(format!("fewer than {min_count} samples, reported as {OTHER_LABEL}: {}", names.join(", ")));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let labels = (0..counts.len()).map(|i| format!("c{i}")).collect();
        ConfusionMatrix::new(labels, counts).unwrap()
    }

    #[test]
    fn two_by_two_hand_values() {
        let r = metrics_from_confusion(&cm(vec![vec![8, 2], vec![3, 7]])).unwrap();
        let c0 = &r.per_class["c0"];
        assert!((c0.precision - 8.0 / 11.0).abs() < 1e-15);
        assert!((c0.recall - 0.8).abs() < 1e-15);
        assert!((c0.f1 - 16.0 / 21.0).abs() < 1e-15);
        let expected = (16.0 / 21.0 + 14.0 / 19.0) / 2.0;
        assert!((r.macro_scores.f1 - expected).abs() < 1e-15);
        assert!((r.macro_scores.f1 - 0.7494).abs() < 1e-4);
    }

    #[test]
    fn diagonal_and_anti_diagonal() {
        let r = metrics_from_confusion(&cm(vec![vec![5, 0, 0], vec![0, 2, 0], vec![0, 0, 9]])).unwrap();
        assert_eq!((r.macro_scores.precision, r.macro_scores.recall, r.macro_scores.f1), (1.0, 1.0, 1.0));
        let r = metrics_from_confusion(&cm(vec![vec![0, 4], vec![6, 0]])).unwrap();
        assert_eq!(r.macro_scores.f1, 0.0);
    }

    #[test]
    fn zero_denominators_are_flagged() {
        let r = metrics_from_confusion(&cm(vec![vec![3, 0, 1], vec![2, 0, 0], vec![0, 0, 0]])).unwrap();
        assert_eq!(r.per_class["c1"].precision, 0.0);
        assert_eq!(r.per_class["c2"].recall, 0.0);
        assert_eq!(r.flags.len(), 2);
        assert!(metrics_from_confusion(&cm(vec![vec![0, 0], vec![0, 0]])).is_err());
        assert!(metrics_from_confusion(&cm(vec![vec![1]])).is_err());
    }

    #[test]
    fn json_has_fixed_fields() {
        let r = metrics_from_confusion(&cm(vec![vec![8, 2], vec![3, 7]])).unwrap();
        let v = r.to_json();
        for key in ["Macro-Precision", "Macro-Recall", "Macro-OvR AUC", "Macro-F1"] {
            assert!(v["summary"].get(key).is_some(), "{key}");
        }
        assert!(v["macro"]["f1"].is_number());
        assert_eq!(v["confusion"]["counts"][1][0], 3);
        assert_eq!(v["per_class"]["c0"]["support"], 10);
    }

    #[test]
    fn auc_perfect_and_flags() {
        let scores = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]];
        let r = auc_macro_ovr(&scores, &[0, 1, 1], 3).unwrap();
        assert_eq!(r.macro_auc, Some(1.0));
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.flags.len(), 1);
    }

    #[test]
    fn midranks_share_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rare_classes() {
        let mut labels = vec!["A"; 50];
        labels.extend(["B"; 3]);
        let agg = aggregate_rare_classes(&labels, 10);
        assert_eq!(agg.mapping["B"], OTHER_LABEL);
        assert_eq!(agg.mapping["A"], "A");
        assert_eq!(agg.labels[52], OTHER_LABEL);
        assert!(!agg.degenerate);
        // exactly 10 is kept
        let ten = ["X"; 10].iter().chain(["Y"; 9].iter()).copied().collect::<Vec<_>>();
        let agg = aggregate_rare_classes(&ten, 10);
        assert_eq!(agg.mapping["X"], "X");
        assert_eq!(agg.mapping["Y"], OTHER_LABEL);
        let all_rare = aggregate_rare_classes(&["a", "b", "c"], 10);
        assert!(all_rare.degenerate);
        assert!(all_rare.labels.iter().all(|l| l == OTHER_LABEL));
        let ident = aggregate_rare_classes(&["a"; 12], 10);
        assert_eq!(ident.labels, vec!["a"; 12]);
    }

    proptest::proptest! {
        #[test]
        fn permutation_equivariant(
            counts in proptest::collection::vec(0u64..20, 16),
            perm_seed in 0usize..24,
        ) {
            let m: Vec<Vec<u64>> = counts.chunks(4).map(|r| r.to_vec()).collect();
            proptest::prop_assume!(m.iter().flatten().sum::<u64>() > 0);
            let base = metrics_from_confusion(&cm(m.clone())).unwrap();
            // perm_seed-th permutation of 4 labels
            let mut pool: Vec<usize> = (0..4).collect();
            let mut perm = Vec::new();
            let mut s = perm_seed;
            for r in (1..=4).rev() {
                perm.push(pool.remove(s % r));
                s /= r;
            }
            let mut pm = vec![vec![0; 4]; 4];
            let mut labels = vec![String::new(); 4];
            for i in 0..4 {
                labels[perm[i]] = format!("c{i}");
                for j in 0..4 {
                    pm[perm[i]][perm[j]] = m[i][j];
                }
            }
            let r = metrics_from_confusion(&ConfusionMatrix::new(labels, pm).unwrap()).unwrap();
            proptest::prop_assert_eq!(&r.per_class, &base.per_class);
            proptest::prop_assert!((r.macro_scores.f1 - base.macro_scores.f1).abs() < 1e-12);
            proptest::prop_assert!((r.macro_scores.precision - base.macro_scores.precision).abs() < 1e-12);
            proptest::prop_assert!((r.macro_scores.recall - base.macro_scores.recall).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform(
            rows in proptest::collection::vec((0usize..3, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 6..60),
        ) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let scores: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.1, r.2, r.3]).collect();
            let moved: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|v| (2.0 * v).exp() + 5.0).collect()).collect();
            let a = auc_macro_ovr(&scores, &labels, 3).unwrap();
            let b = auc_macro_ovr(&moved, &labels, 3).unwrap();
            proptest::prop_assert_eq!(a, b);
        }

        #[test]
        fn confusion_rows_match_support(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..100)) {
            let truth: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let pred: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let labels: Vec<String> = (0..4).map(|i| i.to_string()).collect();
            let c = ConfusionMatrix::from_predictions(labels, &truth, &pred).unwrap();
            for k in 0..4 {
                proptest::prop_assert_eq!(c.row_sum(k) as usize, truth.iter().filter(|&&t| t == k).count());
            }
        }
    }

    #[test]
    fn rare_classes_fold_into_other() {
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        // 12 a, 10 b, 3 c; every c is predicted as c
        let mut truth = vec![0; 12];
        truth.extend(vec![1; 10]);
        truth.extend(vec![2; 3]);
        let probs: Vec<Vec<f64>> = truth
            .iter()
            .map(|&t| {
                let mut r = vec![0.1; 3];
                r[t] = 0.8;
                r
            })
            .collect();
        let rep = evaluate_scores(&labels, &truth, &probs, 10).unwrap();
        assert_eq!(rep.confusion.labels, ["a", "b", OTHER_LABEL]);
        assert_eq!(rep.confusion.counts, vec![vec![12, 0, 0], vec![0, 10, 0], vec![0, 0, 3]]);
        assert_eq!(rep.per_class[OTHER_LABEL].support, 3);
        assert_eq!(rep.macro_scores.f1, 1.0);
        assert_eq!(rep.macro_scores.auc_ovr, Some(1.0));
        assert!(rep.flags.iter().any(|f| f.contains("c")));

        // with min_count 0 nothing is merged
        let rep = evaluate_scores(&labels, &truth, &probs, 0).unwrap();
        assert_eq!(rep.confusion.labels, ["a", "b", "c"]);
        // a class with exactly min_count samples stays
        let rep = evaluate_scores(&labels, &truth, &probs, 3).unwrap();
        assert_eq!(rep.confusion.labels.len(), 3);
    }

    #[test]
    fn aggregation_to_one_class_is_an_error() {
        let labels: Vec<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        assert!(evaluate_scores(&labels, &[0, 1], &[vec![0.9, 0.1], vec![0.2, 0.8]], 10).is_err());
    }
}
