//! Central finite-difference checks of every analytic gradient.
//!
//! The error of one check is `max|a - n| / max(max|a|, max|n|)` over the
//! compared entries (per parameter block for the end-to-end model), which
//! stays meaningful when individual entries are near zero.

use serde::Serialize;

use crate::alignkit;
use crate::encoders::{Block, EncoderInput, ModelParams, ModelShape};
use crate::losses::{self, LossWeights, Phase};
use crate::numkit::{Matrix, Rng, Vector};
use crate::sinkhorn::{self, OtConfig};
use crate::trainer::{self, Result, TrainConfig};

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|x| x.abs())
        .fold(0.0, f64::max);
    diff / scale.max(1e-12)
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &Matrix, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-1.0, 1.0))
}

fn check_matrix(name: &str, x: &Matrix, analytic: &Matrix, f: impl FnMut(&Matrix) -> f64) -> GradCheck {
    let numeric = numeric_gradient(x, f);
    GradCheck {
        name: name.to_string(),
        max_rel_error: relative_error(analytic.data(), numeric.data()),
        entries: x.data().len(),
    }
}

pub fn check_infonce(rng: &mut Rng) -> Result<GradCheck> {
    let w = LossWeights::default();
    let s = random_matrix(rng, 4, 4);
    let (_, g) = losses::infonce_symmetric(&s, w.tau_contrastive)?;
    Ok(check_matrix("infonce_symmetric", &s, &g, |m| {
        losses::infonce_symmetric(m, w.tau_contrastive).map(|r| r.0).unwrap_or(f64::NAN)
    }))
}

pub fn check_word_loss(rng: &mut Rng) -> Result<GradCheck> {
    let c = random_matrix(rng, 5, 6);
    let plan = sinkhorn::sinkhorn_solve(&c, &OtConfig::default())?;
    let labels = alignkit::make_pseudo_labels(&plan);
    let g = alignkit::word_alignment_loss_grad(&c, &labels)?;
    Ok(check_matrix("word_alignment_loss", &c, &g, |m| {
        alignkit::word_alignment_loss(m, &labels).unwrap_or(f64::NAN)
    }))
}

pub fn check_kd(rng: &mut Rng) -> Result<GradCheck> {
    let w = LossWeights::default();
    let s_cm = random_matrix(rng, 4, 4);
    let s_cl = random_matrix(rng, 4, 4);
    let (_, g) = losses::kd_loss(&s_cm, &s_cl, w.tau)?;
    Ok(check_matrix("kd_loss", &s_cm, &g, |m| {
        losses::kd_loss(m, &s_cl, w.tau).map(|r| r.0).unwrap_or(f64::NAN)
    }))
}

/// Tiny model: vocabularies of 10, width 4, batch of 3, sentences of 2..=6 words.
pub fn tiny_problem(seed: u64) -> (ModelParams, Vec<EncoderInput>) {
    let shape = ModelShape {
        src_vocab: 10,
        tgt_vocab: 10,
        feat_dim: 4,
        embed_dim: 4,
        output_dim: 4,
    };
    let params = ModelParams::init(shape, seed);
    let mut rng = Rng::new(seed, 99);
    let inputs = (0..3)
        .map(|_| {
            let m = rng.between(2, 6);
            let n = rng.between(2, 6);
            EncoderInput {
                src_tokens: (0..m).map(|_| rng.below(10)).collect(),
                tgt_tokens: (0..n).map(|_| rng.below(10)).collect(),
                vision: Vector::new((0..4).map(|_| rng.normal()).collect()).expect("finite"),
            }
        })
        .collect();
    (params, inputs)
}

/// Full objective against every parameter entry of the tiny model, with
/// pseudo-labels and teacher held at their base-point values.
pub fn check_end_to_end(name: &str, seed: u64, cfg: &TrainConfig) -> Result<GradCheck> {
    let (params, inputs) = tiny_problem(seed);
    let (base, grads) = trainer::loss_and_param_grads(&params, &inputs, cfg, Phase::Joint, None)?;
    let targets = base.targets;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut probe = params.clone();
    for b in Block::ALL {
        let len = probe.block(b).data().len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.block(b).data()[i];
            let mut eval = |v: f64| -> Result<f64> {
                probe.block_mut(b).data_mut()[i] = v;
                let out = trainer::batch_objective(&probe, &inputs, cfg, Phase::Joint, Some(&targets))?;
                Ok(out.objective.total)
            };
            let up = eval(orig + FD_STEP)?;
            let down = eval(orig - FD_STEP)?;
            eval(orig)?;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(grads.block(b).data(), &numeric));
        entries += len;
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        entries,
    })
}

/// Every check in the suite.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = Rng::new(seed, 3);
    let mut out = vec![check_infonce(&mut rng)?, check_word_loss(&mut rng)?, check_kd(&mut rng)?];
    let cfg = TrainConfig::default();
    out.push(check_end_to_end("total_objective", seed, &cfg)?);
    let mut variant = cfg.clone();
    variant.weights.kd_bidirectional = true;
    variant.word_loss_reduction = alignkit::WordLossReduction::Sum;
    out.push(check_end_to_end("total_objective_variant", seed, &variant)?);
    Ok(out)
}
