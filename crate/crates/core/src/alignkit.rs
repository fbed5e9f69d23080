//! Pseudo alignment labels from transport plans, the self-supervised word
//! loss, and word-level MaxSim similarity.

use serde::{Deserialize, Serialize};

use crate::numkit::{self, Matrix, NumError};
use crate::sinkhorn::TransportPlan;

/// Which side of the threshold survives when building pseudo-labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Keep entries strictly above the mean plan value.
    #[default]
    Above,
    /// Keep entries at or below the mean plan value.
    Below,
}

/// Row-normalized, thresholded alignment targets.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelMatrix {
    pub labels: Matrix,
    pub threshold_used: f64,
    /// Rows where no entry passed the threshold and the argmax one-hot was used.
    pub fallback_rows: Vec<usize>,
}

/// Reduction applied over source words in [`word_alignment_loss`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordLossReduction {
    /// Divide the double sum by the number of source words.
    #[default]
    Mean,
    Sum,
}

impl WordLossReduction {
    fn scale(self, rows: usize) -> f64 {
        match self {
            Self::Mean => 1.0 / rows as f64,
            Self::Sum => 1.0,
        }
    }
}

pub fn make_pseudo_labels(plan: &TransportPlan) -> PseudoLabelMatrix {
    pseudo_labels_with_mode(&plan.plan, ThresholdMode::Above)
}

/// Thresholds `plan` at its global mean and renormalizes each row.
pub fn pseudo_labels_with_mode(plan: &Matrix, mode: ThresholdMode) -> PseudoLabelMatrix {
    let gamma = plan.mean();
    let keep = |x: f64| match mode {
        ThresholdMode::Above => x > gamma,
        ThresholdMode::Below => x <= gamma,
    };
    let mut labels = Matrix::zeros(plan.rows(), plan.cols());
    let mut fallback_rows = Vec::new();
    for r in 0..plan.rows() {
        let row = plan.row(r);
        let kept: f64 = row.iter().filter(|&&x| keep(x)).sum();
        if kept > 0.0 {
            for (out, &x) in labels.row_mut(r).iter_mut().zip(row) {
                if keep(x) {
                    *out = x / kept;
                }
            }
        } else {
            labels[(r, argmax(row))] = 1.0;
            fallback_rows.push(r);
        }
    }
    PseudoLabelMatrix {
        labels,
        threshold_used: gamma,
        fallback_rows,
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy between the pseudo-labels and `softmax(similarity)` rows.
pub fn word_alignment_loss(similarity: &Matrix, labels: &PseudoLabelMatrix) -> Result<f64, NumError> {
    word_alignment_loss_with(similarity, labels, WordLossReduction::Mean)
}

pub fn word_alignment_loss_with(
    similarity: &Matrix,
    labels: &PseudoLabelMatrix,
    reduction: WordLossReduction,
) -> Result<f64, NumError> {
    similarity.ensure_same_shape(&labels.labels)?;
    let log_p = numkit::row_log_softmax(similarity, 1.0)?;
    let total: f64 = labels
        .labels
        .data()
        .iter()
        .zip(log_p.data())
        .filter(|(&a, _)| a > 0.0)
        .map(|(a, lp)| -a * lp)
        .sum();
    Ok(total * reduction.scale(similarity.rows()))
}

/// Gradient of [`word_alignment_loss`] with respect to the similarity
/// entries: `(P - labels) / M`. Labels are constants.
pub fn word_alignment_loss_grad(
    similarity: &Matrix,
    labels: &PseudoLabelMatrix,
) -> Result<Matrix, NumError> {
    word_alignment_loss_grad_with(similarity, labels, WordLossReduction::Mean)
}

pub fn word_alignment_loss_grad_with(
    similarity: &Matrix,
    labels: &PseudoLabelMatrix,
    reduction: WordLossReduction,
) -> Result<Matrix, NumError> {
    similarity.ensure_same_shape(&labels.labels)?;
    let p = numkit::row_softmax(similarity, 1.0)?;
    let mut grad = p.axpy(-1.0, &labels.labels)?;
    let k = reduction.scale(similarity.rows());
    grad.data_mut().iter_mut().for_each(|g| *g *= k);
    Ok(grad)
}

/// Mean over source words of the best cosine to any target word.
pub fn maxsim_similarity(source_words: &Matrix, target_words: &Matrix) -> Result<f64, NumError> {
    let c = numkit::cosine_matrix(source_words, target_words)?;
    if c.rows() == 0 {
        return Err(NumError::ShapeMismatch {
            left: source_words.shape(),
            right: target_words.shape(),
        });
    }
    let total: f64 = c
        .row_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum();
    Ok(total / c.rows() as f64)
}
