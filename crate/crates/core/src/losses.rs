//! Batch objectives: symmetric InfoNCE, fused cross-lingual similarity,
//! relational distillation, and their weighted composition.
//!
//! Every loss returns its analytic gradient with respect to the similarity
//! matrix it consumes. Teacher distributions and pseudo-labels are constants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{self, Matrix, NumError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("expected a square similarity matrix, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("invalid loss configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, LossError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Mix between cross-modal instance loss and distillation.
    pub alpha: f64,
    /// Mix between sentence- and word-level cross-lingual similarity.
    pub lambda_level: f64,
    /// Distillation temperature.
    pub tau: f64,
    /// InfoNCE temperature.
    pub tau_contrastive: f64,
    /// Also distill along columns (text-to-vision direction).
    pub kd_bidirectional: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            lambda_level: 0.6,
            tau: 0.07,
            tau_contrastive: 0.07,
            kd_bidirectional: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(LossError::Config(format!("alpha {} not in [0,1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda_level) {
            return Err(LossError::Config(format!(
                "lambda_level {} not in [0,1]",
                self.lambda_level
            )));
        }
        if !(self.tau > 0.0) || !(self.tau_contrastive > 0.0) {
            return Err(LossError::Config("temperatures must be positive".into()));
        }
        Ok(())
    }
}

/// Ablation switches over the optional loss components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub cl_instance: bool,
    pub word_align: bool,
    pub kd_sent: bool,
    pub kd_word: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::ALL
    }
}

impl Toggles {
    pub const NONE: Self = Self {
        cl_instance: false,
        word_align: false,
        kd_sent: false,
        kd_word: false,
    };
    pub const ALL: Self = Self {
        cl_instance: true,
        word_align: true,
        kd_sent: true,
        kd_word: true,
    };

    /// The seven rows of the component ablation grid, baseline first.
    pub fn ablation_grid() -> [Self; 7] {
        let t = |cl_instance, word_align, kd_sent, kd_word| Self {
            cl_instance,
            word_align,
            kd_sent,
            kd_word,
        };
        [
            t(false, false, false, false),
            t(true, false, false, false),
            t(true, true, false, false),
            t(true, false, true, false),
            t(true, true, true, false),
            t(true, true, false, true),
            t(true, true, true, true),
        ]
    }

    pub fn any_kd(&self) -> bool {
        self.kd_sent || self.kd_word
    }

    pub fn any_cl(&self) -> bool {
        self.cl_instance || self.word_align
    }

    /// Short label such as `cl_instance+word_align`, or `baseline`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.cl_instance, "cl_instance"),
            (self.word_align, "word_align"),
            (self.kd_sent, "kd_sent"),
            (self.kd_word, "kd_word"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "baseline".to_string()
        } else {
            names.join("+")
        }
    }

    pub fn validate(&self, mode: TrainMode) -> Result<()> {
        if mode == TrainMode::TwoStage && self.any_kd() && !self.any_cl() {
            return Err(LossError::Config(
                "two-stage training with distillation needs cl_instance or word_align".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    EndToEnd,
    TwoStage,
}

/// Which networks' losses are active in the current step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Joint,
    CrossLingualOnly,
    CrossModalOnly,
}

/// All B×B similarity matrices of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSimilarities {
    /// Vision × target sentence.
    pub s_cm: Matrix,
    /// Source sentence × target sentence.
    pub s_cl_sent: Matrix,
    /// Pairwise MaxSim over word representations.
    pub s_cl_word: Matrix,
    /// `lambda * s_cl_sent + (1 - lambda) * s_cl_word`.
    pub s_cl: Matrix,
}

impl BatchSimilarities {
    pub fn new(s_cm: Matrix, s_cl_sent: Matrix, s_cl_word: Matrix, lambda_level: f64) -> Result<Self> {
        let s_cl = fuse_cl_similarity(&s_cl_sent, &s_cl_word, lambda_level)?;
        s_cm.ensure_same_shape(&s_cl)?;
        if s_cm.rows() != s_cm.cols() {
            return Err(LossError::NotSquare(s_cm.rows(), s_cm.cols()));
        }
        Ok(Self {
            s_cm,
            s_cl_sent,
            s_cl_word,
            s_cl,
        })
    }
}

/// Symmetric InfoNCE over `S / tau`, diagonal entries are the positives.
pub fn infonce_symmetric(s: &Matrix, tau_contrastive: f64) -> Result<(f64, Matrix)> {
    let b = s.rows();
    if b != s.cols() {
        return Err(LossError::NotSquare(s.rows(), s.cols()));
    }
    if b == 0 {
        return Ok((0.0, Matrix::zeros(0, 0)));
    }
    let log_row = numkit::row_log_softmax(s, tau_contrastive)?;
    let log_col = numkit::row_log_softmax(&s.transpose(), tau_contrastive)?;
    let loss = -(0..b)
        .map(|i| log_row[(i, i)] + log_col[(i, i)])
        .sum::<f64>()
        / (2.0 * b as f64);

    let scale = 1.0 / (2.0 * b as f64 * tau_contrastive);
    let grad = Matrix::from_fn(b, b, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        let p_row = log_row[(i, j)].exp();
        let p_col = log_col[(j, i)].exp();
        scale * (p_row - delta + p_col - delta)
    });
    Ok((loss, grad))
}

/// Entrywise `lambda * sent + (1 - lambda) * word`.
pub fn fuse_cl_similarity(sent: &Matrix, word: &Matrix, lambda_level: f64) -> Result<Matrix> {
    sent.ensure_same_shape(word)?;
    if !(0.0..=1.0).contains(&lambda_level) {
        return Err(LossError::Config(format!(
            "lambda_level {lambda_level} not in [0,1]"
        )));
    }
    if lambda_level == 1.0 {
        return Ok(sent.clone());
    }
    if lambda_level == 0.0 {
        return Ok(word.clone());
    }
    Ok(Matrix::from_fn(sent.rows(), sent.cols(), |r, c| {
        lambda_level * sent[(r, c)] + (1.0 - lambda_level) * word[(r, c)]
    }))
}

/// Row-wise relational distillation `mean_i KL(p_cm_i || p_cl_i)`.
///
/// The teacher `s_cl` receives no gradient.
pub fn kd_loss(s_cm: &Matrix, s_cl: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    s_cm.ensure_same_shape(s_cl)?;
    if s_cm.rows() != s_cm.cols() {
        return Err(LossError::NotSquare(s_cm.rows(), s_cm.cols()));
    }
    let b = s_cm.rows();
    if b == 0 {
        return Ok((0.0, Matrix::zeros(0, 0)));
    }
    // Log-space throughout, so tiny teacher probabilities need no clamping.
    let log_p = numkit::row_log_softmax(s_cm, tau)?;
    let log_q = numkit::row_log_softmax(s_cl, tau)?;
    let p = log_p.map(f64::exp);
    let per_row: Vec<f64> = (0..b)
        .map(|i| (0..b).map(|k| p[(i, k)] * (log_p[(i, k)] - log_q[(i, k)])).sum())
        .collect();
    let loss = per_row.iter().sum::<f64>() / b as f64;

    // d KL_i / d s_ik = p_ik (log p_ik - log q_ik - KL_i) / tau
    let scale = 1.0 / (b as f64 * tau);
    let grad = Matrix::from_fn(b, b, |i, k| {
        scale * p[(i, k)] * (log_p[(i, k)] - log_q[(i, k)] - per_row[i])
    });
    Ok((loss, grad))
}

/// Average of row-wise and column-wise distillation.
pub fn kd_loss_bidirectional(s_cm: &Matrix, s_cl: &Matrix, tau: f64) -> Result<(f64, Matrix)> {
    let (l_row, g_row) = kd_loss(s_cm, s_cl, tau)?;
    let (l_col, g_col) = kd_loss(&s_cm.transpose(), &s_cl.transpose(), tau)?;
    let g_col = g_col.transpose();
    let grad = Matrix::from_fn(g_row.rows(), g_row.cols(), |r, c| {
        0.5 * (g_row[(r, c)] + g_col[(r, c)])
    });
    Ok((0.5 * (l_row + l_col), grad))
}

/// Raw (unweighted) component values; disabled components are exactly 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cm_instance: f64,
    pub kd: f64,
    pub cl_instance: f64,
    pub word: f64,
}

impl LossComponents {
    /// `alpha * cm_instance + (1 - alpha) * kd + cl_instance + word`.
    pub fn weighted_total(&self, alpha: f64) -> f64 {
        alpha * self.cm_instance + (1.0 - alpha) * self.kd + self.cl_instance + self.word
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub total: f64,
    pub components: LossComponents,
    pub grad_s_cm: Matrix,
    pub grad_s_cl_sent: Matrix,
    /// `d total / d word_losses[k]`, identical for every pair.
    pub word_loss_weight: f64,
}

/// Selects the distillation teacher for the enabled level toggles.
pub fn teacher_similarity<'a>(batch: &'a BatchSimilarities, toggles: &Toggles) -> Option<&'a Matrix> {
    match (toggles.kd_sent, toggles.kd_word) {
        (true, true) => Some(&batch.s_cl),
        (true, false) => Some(&batch.s_cl_sent),
        (false, true) => Some(&batch.s_cl_word),
        (false, false) => None,
    }
}

/// Composes `L = L_cm + L_cl` under the ablation toggles and training phase.
///
/// `word_losses` holds one word-alignment loss per aligned pair; the batch
/// word loss is their mean.
pub fn total_objective(
    batch: &BatchSimilarities,
    word_losses: &[f64],
    weights: &LossWeights,
    toggles: &Toggles,
    phase: Phase,
) -> Result<Objective> {
    let teacher = teacher_similarity(batch, toggles);
    total_objective_with_teacher(batch, teacher, word_losses, weights, toggles, phase)
}

/// [`total_objective`] with an explicit teacher; `None` disables distillation.
pub fn total_objective_with_teacher(
    batch: &BatchSimilarities,
    teacher: Option<&Matrix>,
    word_losses: &[f64],
    weights: &LossWeights,
    toggles: &Toggles,
    phase: Phase,
) -> Result<Objective> {
    weights.validate()?;
    let b = batch.s_cm.rows();
    let cm_on = phase != Phase::CrossLingualOnly;
    let cl_on = phase != Phase::CrossModalOnly;

    let mut components = LossComponents::default();
    let mut grad_s_cm = Matrix::zeros(b, b);
    let mut grad_s_cl_sent = Matrix::zeros(b, b);
    let mut word_loss_weight = 0.0;

    if cm_on {
        let (l, g) = infonce_symmetric(&batch.s_cm, weights.tau_contrastive)?;
        components.cm_instance = l;
        grad_s_cm.add_scaled(weights.alpha, &g)?;
        if let Some(teacher) = teacher {
            let (l, g) = if weights.kd_bidirectional {
                kd_loss_bidirectional(&batch.s_cm, teacher, weights.tau)?
            } else {
                kd_loss(&batch.s_cm, teacher, weights.tau)?
            };
            components.kd = l;
            grad_s_cm.add_scaled(1.0 - weights.alpha, &g)?;
        }
    }
    if cl_on && toggles.cl_instance {
        let (l, g) = infonce_symmetric(&batch.s_cl_sent, weights.tau_contrastive)?;
        components.cl_instance = l;
        grad_s_cl_sent.add_scaled(1.0, &g)?;
    }
    if cl_on && toggles.word_align {
        if word_losses.is_empty() {
            return Err(LossError::Config(
                "word alignment enabled but no per-pair word losses given".into(),
            ));
        }
        let n = word_losses.len() as f64;
        components.word = word_losses.iter().sum::<f64>() / n;
        word_loss_weight = 1.0 / n;
    }

    Ok(Objective {
        total: components.weighted_total(weights.alpha),
        components,
        grad_s_cm,
        grad_s_cl_sent,
        word_loss_weight,
    })
}
