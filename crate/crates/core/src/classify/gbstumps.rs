use serde::{Deserialize, Serialize};

use super::{evaluate_predictions, ClassifyError};

/// L2 penalty in the leaf values `sum g / (sum h + lambda)`.
pub const LEAF_L2: f64 = 1.0;
/// Validation grid searched by [`gbstumps_grid_search`].
pub const GRID_ROUNDS: [usize; 2] = [50, 200];
pub const GRID_LEARNING_RATES: [f64; 2] = [0.1, 0.3];

/// One depth-1 tree shared by all classes, with per-class leaf values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    /// `x[feature] <= threshold` takes `left`.
    pub threshold: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Gradient-boosted stumps on the multiclass softmax objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostedStumps {
    pub num_features: usize,
    pub num_classes: usize,
    pub learning_rate: f64,
    /// Initial scores: log of the smoothed training class frequencies.
    pub base_scores: Vec<f64>,
    pub rounds: Vec<Stump>,
    /// Mean training cross-entropy before any round and after each round.
    pub train_loss: Vec<f64>,
}

fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

fn mean_cross_entropy(scores: &[f64], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for (row, &y) in scores.chunks(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / labels.len() as f64
}

fn check_input(latents: &[Vec<f64>], labels: &[usize], k: usize) -> Result<usize, ClassifyError> {
    if latents.is_empty() {
        return Err(ClassifyError::Input("boosting needs at least one sample".into()));
    }
    if latents.len() != labels.len() {
        return Err(ClassifyError::Input(format!("{} rows vs {} labels", latents.len(), labels.len())));
    }
    let d = latents[0].len();
    if d == 0 || latents.iter().any(|r| r.len() != d || r.iter().any(|v| !v.is_finite())) {
        return Err(ClassifyError::Input("rows must share a non-zero width and be finite".into()));
    }
    if k < 2 || labels.iter().any(|&l| l >= k) {
        return Err(ClassifyError::Input(format!("labels must be < num_classes ({k}), with num_classes >= 2")));
    }
    Ok(d)
}

/// Fits `rounds` stumps. Each round picks the single `(feature, threshold)`
/// maximising the second-order gain summed over classes; ties go to the
/// lowest feature, then the lowest threshold. Leaf values are
/// `learning_rate * sum g / (sum h + LEAF_L2)` with `g = y - p`,
/// `h = p (1 - p)`. A round whose step would raise the training loss is
/// halved until it does not; the ensemble stops early when no split helps.
pub fn gbstumps_fit(
    latents: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    rounds: usize,
    learning_rate: f64,
) -> Result<BoostedStumps, ClassifyError> {
    let d = check_input(latents, labels, num_classes)?;
    if rounds == 0 {
        return Err(ClassifyError::Input("rounds must be >= 1".into()));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(ClassifyError::Input("learning rate must be > 0".into()));
    }
    let (n, k) = (latents.len(), num_classes);
    let mut freq = vec![1.0; k];
    for &l in labels {
        freq[l] += 1.0;
    }
    let total: f64 = freq.iter().sum();
    let base_scores: Vec<f64> = freq.iter().map(|f| (f / total).ln()).collect();

    // per feature: sample order by value, and the distinct split midpoints
    let orders: Vec<Vec<usize>> = (0..d)
        .map(|j| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| latents[a][j].total_cmp(&latents[b][j]).then(a.cmp(&b)));
            o
        })
        .collect();

    let mut scores: Vec<f64> = (0..n).flat_map(|_| base_scores.iter().copied()).collect();
    let mut model = BoostedStumps {
        num_features: d,
        num_classes: k,
        learning_rate,
        base_scores,
        rounds: Vec::new(),
        train_loss: vec![mean_cross_entropy(&scores, labels, k)],
    };
    let mut g = vec![0.0; n * k];
    let mut h = vec![0.0; n * k];
    let mut p = vec![0.0; k];
    for _ in 0..rounds {
        for i in 0..n {
            softmax_into(&scores[i * k..(i + 1) * k], &mut p);
            for c in 0..k {
                let y = if labels[i] == c { 1.0 } else { 0.0 };
                g[i * k + c] = y - p[c];
                h[i * k + c] = p[c] * (1.0 - p[c]);
            }
        }
        let (gt, ht) = column_sums(&g, &h, (0..n).collect::<Vec<_>>().iter(), k);
        let parent: f64 = (0..k).map(|c| gt[c] * gt[c] / (ht[c] + LEAF_L2)).sum();

        let mut best: Option<(f64, usize, f64)> = None;
        for (j, order) in orders.iter().enumerate() {
            let mut gl = vec![0.0; k];
            let mut hl = vec![0.0; k];
            for w in 0..n - 1 {
                let i = order[w];
                for c in 0..k {
                    gl[c] += g[i * k + c];
                    hl[c] += h[i * k + c];
                }
                let (v, next) = (latents[i][j], latents[order[w + 1]][j]);
                if v == next {
                    continue;
                }
                let gain: f64 = (0..k)
                    .map(|c| {
                        let (gr, hr) = (gt[c] - gl[c], ht[c] - hl[c]);
                        gl[c] * gl[c] / (hl[c] + LEAF_L2) + gr * gr / (hr + LEAF_L2)
                    })
                    .sum::<f64>()
                    - parent;
                // strict: earlier features and lower thresholds win ties
                if best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, j, (v + next) / 2.0));
                }
            }
        }
        let Some((gain, feature, threshold)) = best else { break };
        if gain <= 1e-12 {
            break;
        }
        let left_idx: Vec<usize> = (0..n).filter(|&i| latents[i][feature] <= threshold).collect();
        let right_idx: Vec<usize> = (0..n).filter(|&i| latents[i][feature] > threshold).collect();
        let leaf = |idx: &[usize]| -> Vec<f64> {
            let (gs, hs) = column_sums(&g, &h, idx.iter(), k);
            (0..k).map(|c| learning_rate * gs[c] / (hs[c] + LEAF_L2)).collect()
        };
        let mut stump = Stump {
            feature,
            threshold,
            left: leaf(&left_idx),
            right: leaf(&right_idx),
        };
        let before = *model.train_loss.last().expect("initial loss");
        let mut trial = scores.clone();
        let mut accepted = false;
        for _ in 0..30 {
            trial.copy_from_slice(&scores);
            apply(&stump, latents, &mut trial, k);
            let loss = mean_cross_entropy(&trial, labels, k);
            if loss <= before {
                model.train_loss.push(loss);
                accepted = true;
                break;
            }
            stump.left.iter_mut().chain(stump.right.iter_mut()).for_each(|v| *v *= 0.5);
        }
        if !accepted {
            break;
        }
        scores = trial;
        model.rounds.push(stump);
    }
    Ok(model)
}

fn column_sums<'a>(g: &[f64], h: &[f64], idx: impl Iterator<Item = &'a usize>, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gs = vec![0.0; k];
    let mut hs = vec![0.0; k];
    for &i in idx {
        for c in 0..k {
            gs[c] += g[i * k + c];
            hs[c] += h[i * k + c];
        }
    }
    (gs, hs)
}

fn apply(stump: &Stump, latents: &[Vec<f64>], scores: &mut [f64], k: usize) {
    for (i, row) in latents.iter().enumerate() {
        let delta = if row[stump.feature] <= stump.threshold {
            &stump.left
        } else {
            &stump.right
        };
        for c in 0..k {
            scores[i * k + c] += delta[c];
        }
    }
}

impl BoostedStumps {
    pub fn decision_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.base_scores.clone();
        for st in &self.rounds {
            let delta = if x[st.feature] <= st.threshold { &st.left } else { &st.right };
            s.iter_mut().zip(delta).for_each(|(a, b)| *a += b);
        }
        s
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.num_classes];
        softmax_into(&self.decision_scores(x), &mut p);
        p
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let s = self.decision_scores(x);
        (0..s.len()).fold(0, |b, c| if s[c] > s[b] { c } else { b })
    }
}

/// One grid cell's validation result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rounds: usize,
    pub learning_rate: f64,
    pub validation_macro_f1: f64,
}

/// Fits every `(rounds, learning_rate)` in the grid and keeps the best
/// validation macro F1 (earliest grid cell on ties).
pub fn gbstumps_grid_search(
    train: (&[Vec<f64>], &[usize]),
    validation: (&[Vec<f64>], &[usize]),
    num_classes: usize,
) -> Result<(BoostedStumps, Vec<GridCell>), ClassifyError> {
    let names: Vec<String> = (0..num_classes).map(|c| c.to_string()).collect();
    let mut best: Option<(f64, BoostedStumps)> = None;
    let mut cells = Vec::new();
    for rounds in GRID_ROUNDS {
        for lr in GRID_LEARNING_RATES {
            let m = gbstumps_fit(train.0, train.1, num_classes, rounds, lr)?;
            let pred: Vec<usize> = validation.0.iter().map(|x| m.predict(x)).collect();
            let f1 = evaluate_predictions(names.clone(), validation.1, &pred)?.macro_scores.f1;
            cells.push(GridCell {
                rounds,
                learning_rate: lr,
                validation_macro_f1: f1,
            });
            if best.as_ref().map_or(true, |(b, _)| f1 > *b) {
                best = Some((f1, m));
            }
        }
    }
    Ok((best.expect("non-empty grid").1, cells))
}
