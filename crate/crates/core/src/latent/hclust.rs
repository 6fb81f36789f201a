use serde::{Deserialize, Serialize};

use super::LatentError;
use crate::classify::ConfusionMatrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
    Single,
    Ward,
}

impl std::str::FromStr for Linkage {
    type Err = LatentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "average" => Ok(Linkage::Average),
            "complete" => Ok(Linkage::Complete),
            "single" => Ok(Linkage::Single),
            "ward" => Ok(Linkage::Ward),
            other => Err(LatentError::Input(format!("unknown linkage {other:?}"))),
        }
    }
}

/// Agglomeration result. Leaf `i` has cluster id `i`; merge `m` creates
/// cluster id `leaves.len() + m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub linkage: Linkage,
    pub leaves: Vec<String>,
    pub merges: Vec<(usize, usize, f64)>,
}

impl Dendrogram {
    /// Flat assignment into `k` clusters, numbered by their smallest leaf.
    pub fn cut_at(&self, k: usize) -> Result<Vec<usize>, LatentError> {
        let n = self.leaves.len();
        if k == 0 || k > n {
            return Err(LatentError::Input(format!("cannot cut {n} leaves into {k} clusters")));
        }
        let mut parent: Vec<usize> = (0..2 * n - 1).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (m, &(a, b, _)) in self.merges.iter().take(n - k).enumerate() {
            let id = n + m;
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = id;
            parent[rb] = id;
        }
        let mut numbering = std::collections::HashMap::new();
        Ok((0..n)
            .map(|i| {
                let root = find(&mut parent, i);
                let next = numbering.len();
                *numbering.entry(root).or_insert(next)
            })
            .collect())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("dendrogram serializes")
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Agglomerative clustering of labelled points under Euclidean distance.
pub fn hclust<L: AsRef<str>, V: AsRef<[f64]>>(points: &[(L, V)], linkage: Linkage) -> Result<Dendrogram, LatentError> {
    let dim = points.first().map_or(0, |p| p.1.as_ref().len());
    if let Some((_, v)) = points.iter().find(|(_, v)| v.as_ref().len() != dim) {
        return Err(LatentError::Dimension {
            expected: dim,
            found: v.as_ref().len(),
        });
    }
    let labels: Vec<String> = points.iter().map(|(l, _)| l.as_ref().to_string()).collect();
    let dist: Vec<Vec<f64>> = points
        .iter()
        .map(|(_, a)| points.iter().map(|(_, b)| euclidean(a.as_ref(), b.as_ref())).collect())
        .collect();
    hclust_distances(&labels, &dist, linkage)
}

/// Agglomerative clustering over a precomputed distance matrix, updated with
/// the Lance-Williams recurrences. Equal distances are broken by the
/// lexically smallest pair of cluster labels, where a cluster's label is
/// that of its first leaf in (label, index) order.
pub fn hclust_distances(labels: &[String], dist: &[Vec<f64>], linkage: Linkage) -> Result<Dendrogram, LatentError> {
    let n = labels.len();
    if n < 2 {
        return Err(LatentError::Input(format!("clustering needs at least 2 points, got {n}")));
    }
    if dist.len() != n || dist.iter().any(|r| r.len() != n) {
        return Err(LatentError::Input(format!("distance matrix must be {n}x{n}")));
    }
    if dist.iter().flatten().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(LatentError::Input("distances must be finite and non-negative".into()));
    }
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    let mut active: Vec<bool> = vec![true; n];
    let mut size = vec![1usize; n];
    let mut id: Vec<usize> = (0..n).collect();
    let mut rep: Vec<(&str, usize)> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut merges = Vec::with_capacity(n - 1);

    for step in 0..n - 1 {
        let mut best: Option<(f64, (&str, usize), (&str, usize), usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let (lo, hi) = if rep[i] <= rep[j] { (i, j) } else { (j, i) };
                let cand = (d[i][j], rep[lo], rep[hi], lo, hi);
                let better = match &best {
                    None => true,
                    Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (h, _, _, a, b) = best.expect("two active clusters remain");
        merges.push((id[a], id[b], h));
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in 0..n {
            if !active[k] || k == a || k == b {
                continue;
            }
            let (dka, dkb) = (d[k][a], d[k][b]);
            let nk = size[k] as f64;
            let updated = match linkage {
                Linkage::Single => dka.min(dkb),
                Linkage::Complete => dka.max(dkb),
                Linkage::Average => (na * dka + nb * dkb) / (na + nb),
                Linkage::Ward => {
                    let sq = ((na + nk) * dka * dka + (nb + nk) * dkb * dkb - nk * h * h) / (na + nb + nk);
                    sq.max(0.0).sqrt()
                }
            };
            d[k][a] = updated;
            d[a][k] = updated;
        }
        active[b] = false;
        size[a] += size[b];
        id[a] = n + step;
        rep[a] = rep[a].min(rep[b]);
    }
    Ok(Dendrogram {
        linkage,
        leaves: labels.to_vec(),
        merges,
    })
}

/// `d_ij = 1 - (c_ij + c_ji) / 2` over the row-normalised confusion matrix.
pub fn confusion_distances(confusion: &ConfusionMatrix) -> Result<Vec<Vec<f64>>, LatentError> {
    let k = confusion.labels.len();
    if k < 2 {
        return Err(LatentError::Input("confusion dendrogram needs at least 2 classes".into()));
    }
    let mut norm = vec![vec![0.0; k]; k];
    for i in 0..k {
        let total = confusion.row_sum(i);
        if total == 0 {
            return Err(LatentError::Input(format!("class {:?} has no samples", confusion.labels[i])));
        }
        for j in 0..k {
            norm[i][j] = confusion.counts[i][j] as f64 / total as f64;
        }
    }
    Ok((0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { 0.0 } else { 1.0 - (norm[i][j] + norm[j][i]) / 2.0 })
                .collect()
        })
        .collect())
}

/// Average-linkage tree of classes, closest where most often confused.
pub fn confusion_dendrogram(confusion: &ConfusionMatrix) -> Result<Dendrogram, LatentError> {
    hclust_distances(&confusion.labels, &confusion_distances(confusion)?, Linkage::Average)
}
