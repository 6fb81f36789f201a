//! Period classifiers and their evaluation: a CNN on raw silhouettes, a
//! one-feature decision tree on the aspect ratio, and boosted stumps on
//! VAE latents.

mod cnn;
mod dtree;
mod gbstumps;
mod metrics;

pub use cnn::{
    cnn_build, cnn_train, CnnArchitecture, CnnEpoch, CnnHistory, CnnModel, CNN_DROPOUT, CNN_HIDDEN, CNN_KIND,
    DEFAULT_CHANNEL_PLAN,
};
pub use dtree::{best_split, dtree_fit, DecisionTree, TreeNode, DEFAULT_TREE_DEPTH};
pub use gbstumps::{
    gbstumps_fit, gbstumps_grid_search, BoostedStumps, GridCell, Stump, GRID_LEARNING_RATES, GRID_ROUNDS, LEAF_L2,
};
pub use metrics::{
    aggregate_rare_classes, auc_macro_ovr, binary_auc, evaluate_predictions, evaluate_scores, metrics_from_confusion, midranks,
    AucReport, ClassScores, ConfusionMatrix, MacroScores, MetricsReport, RareAggregation, OTHER_LABEL,
};

use crate::checkpoint::CheckpointError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("invalid classifier input: {0}")]
    Input(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Index of the largest score; the first one wins on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
