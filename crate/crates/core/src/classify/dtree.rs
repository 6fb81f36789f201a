use serde::{Deserialize, Serialize};

use super::ClassifyError;

pub const DEFAULT_TREE_DEPTH: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// `feature <= threshold` goes left.
    Split { threshold: f64, left: usize, right: usize },
    Leaf { class: usize, distribution: Vec<f64> },
}

/// Classification tree over a single scalar feature. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub num_classes: usize,
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

/// Best split of `(value, label)` pairs sorted by value: `(threshold, gain)`.
/// Candidates are midpoints between adjacent distinct values; ties in gain go
/// to the lower threshold.
pub fn best_split(sorted: &[(f64, usize)], num_classes: usize) -> Option<(f64, f64)> {
    let n = sorted.len();
    let mut total = vec![0usize; num_classes];
    for &(_, l) in sorted {
        total[l] += 1;
    }
    let parent = gini(&total, n);
    let mut left = vec![0usize; num_classes];
    let mut best: Option<(f64, f64)> = None;
    for i in 0..n.saturating_sub(1) {
        left[sorted[i].1] += 1;
        if sorted[i].0 == sorted[i + 1].0 {
            continue;
        }
        let nl = i + 1;
        let right: Vec<usize> = total.iter().zip(&left).map(|(t, l)| t - l).collect();
        let child = (nl as f64 * gini(&left, nl) + (n - nl) as f64 * gini(&right, n - nl)) / n as f64;
        let gain = parent - child;
        if best.map_or(true, |(_, g)| gain > g) {
            best = Some(((sorted[i].0 + sorted[i + 1].0) / 2.0, gain));
        }
    }
    best
}

fn leaf(counts: &[usize], n: usize) -> TreeNode {
    let class = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(k, _)| k)
        .unwrap_or(0);
    TreeNode::Leaf {
        class,
        distribution: counts.iter().map(|&c| c as f64 / n as f64).collect(),
    }
}

/// Greedy Gini tree on one feature.
pub fn dtree_fit(features: &[f64], labels: &[usize], num_classes: usize, max_depth: usize) -> Result<DecisionTree, ClassifyError> {
    if features.is_empty() {
        return Err(ClassifyError::Input("decision tree needs at least one sample".into()));
    }
    if features.len() != labels.len() {
        return Err(ClassifyError::Input(format!("{} features vs {} labels", features.len(), labels.len())));
    }
    if labels.iter().any(|&l| l >= num_classes) || features.iter().any(|v| !v.is_finite()) {
        return Err(ClassifyError::Input("labels must be < num_classes and features finite".into()));
    }
    let mut data: Vec<(f64, usize)> = features.iter().copied().zip(labels.iter().copied()).collect();
    data.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut tree = DecisionTree {
        nodes: Vec::new(),
        max_depth,
        num_classes,
    };
    grow(&mut tree, &data, 0);
    Ok(tree)
}

fn grow(tree: &mut DecisionTree, data: &[(f64, usize)], depth: usize) -> usize {
    let id = tree.nodes.len();
    let mut counts = vec![0usize; tree.num_classes];
    for &(_, l) in data {
        counts[l] += 1;
    }
    tree.nodes.push(leaf(&counts, data.len()));
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if depth >= tree.max_depth || pure {
        return id;
    }
    let Some((threshold, gain)) = best_split(data, tree.num_classes) else {
        return id;
    };
    if gain <= 0.0 {
        return id;
    }
    let cut = data.partition_point(|&(v, _)| v <= threshold);
    let left = grow(tree, &data[..cut], depth + 1);
    let right = grow(tree, &data[cut..], depth + 1);
    tree.nodes[id] = TreeNode::Split { threshold, left, right };
    id
}

impl DecisionTree {
    /// Majority class and class distribution of the leaf reached by `feature`.
    pub fn predict(&self, feature: f64) -> (usize, &[f64]) {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { threshold, left, right } => {
                    i = if feature <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { class, distribution } => return (*class, distribution),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { left, right, .. } => 1 + d(t, *left).max(d(t, *right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        d(self, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_two_classes() {
        let x = [1.0, 1.2, 1.4, 1.6, 1.8, 2.0];
        let y = [0, 0, 0, 1, 1, 1];
        let t = dtree_fit(&x, &y, 2, 4).unwrap();
        assert_eq!(t.depth(), 1);
        assert!(x.iter().zip(&y).all(|(&v, &l)| t.predict(v).0 == l));
        assert_eq!(t.predict(1.0).0, 0);
        assert_eq!(t.predict(2.0).0, 1);
        assert!(matches!(t.nodes[0], TreeNode::Split { threshold, .. } if (threshold - 1.5).abs() < 1e-12));
    }

    #[test]
    fn single_label_is_single_leaf() {
        let t = dtree_fit(&[3.0, 1.0, 2.0], &[2, 2, 2], 3, 5).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.predict(-100.0), (2, &[0.0, 0.0, 1.0][..]));
    }

    #[test]
    fn tie_goes_to_lower_threshold() {
        // splitting at 1.5 or 3.5 both isolate one sample of a symmetric set
        let t = dtree_fit(&[1.0, 2.0, 3.0, 4.0], &[0, 1, 1, 0], 2, 1).unwrap();
        assert!(matches!(t.nodes[0], TreeNode::Split { threshold, .. } if threshold == 1.5));
    }

    #[test]
    fn rejects_empty() {
        assert!(dtree_fit(&[], &[], 2, 3).is_err());
    }

    fn brute_force_best_gain(x: &[f64], y: &[usize], k: usize) -> f64 {
        let mut vals: Vec<f64> = x.to_vec();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        let g = |idx: &[usize]| {
            let n = idx.len() as f64;
            if idx.is_empty() {
                return 0.0;
            }
            1.0 - (0..k)
                .map(|c| (idx.iter().filter(|&&i| y[i] == c).count() as f64 / n).powi(2))
                .sum::<f64>()
        };
        let all: Vec<usize> = (0..x.len()).collect();
        let parent = g(&all);
        vals.windows(2)
            .map(|w| {
                let t = (w[0] + w[1]) / 2.0;
                let l: Vec<usize> = all.iter().copied().filter(|&i| x[i] <= t).collect();
                let r: Vec<usize> = all.iter().copied().filter(|&i| x[i] > t).collect();
                let n = x.len() as f64;
                parent - (l.len() as f64 * g(&l) + r.len() as f64 * g(&r)) / n
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn root_gain_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let n = rng.random_range(5..40);
            let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 4.0).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let mut sorted: Vec<(f64, usize)> = x.iter().copied().zip(y.iter().copied()).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, gain)) = best_split(&sorted, 3) {
                assert!((gain - brute_force_best_gain(&x, &y, 3)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_matches_recursive_evaluator() {
        fn eval(t: &DecisionTree, i: usize, v: f64) -> usize {
            match &t.nodes[i] {
                TreeNode::Split { threshold, left, right } => eval(t, if v <= *threshold { *left } else { *right }, v),
                TreeNode::Leaf { class, .. } => *class,
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..3.0)).collect();
        let y: Vec<usize> = x.iter().map(|v| ((v * 1.7) as usize + rng.random_range(0..2)) % 4).collect();
        let t = dtree_fit(&x, &y, 4, 5).unwrap();
        for node in &t.nodes {
            if let TreeNode::Leaf { distribution, .. } = node {
                assert!((distribution.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for _ in 0..1000 {
            let q = rng.random_range(-1.0..4.0);
            assert_eq!(t.predict(q).0, eval(&t, 0, q));
        }
    }
}
