//! Training loop over both networks, ablation toggles, the two-stage
//! variant, and CM-only inference.
//!
//! Per batch: encode source, target and vision streams; build word-level
//! similarities and solve OT per aligned pair; derive pseudo-labels; assemble
//! the batch similarity matrices; compose the objective; back-propagate;
//! take one Adam step. Pseudo-labels and the distillation teacher are
//! recomputed every step and held constant within it.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignkit::{self, PseudoLabelMatrix, ThresholdMode, WordLossReduction};
use crate::corpus::{CorpusConfig, CorpusError, Triple};
use crate::encoders::{
    self, Block, EncoderError, EncoderInput, ModelConfig, ModelParams, ModelShape, OptimizerConfig,
    OutputGrads, ParamGrads,
};
use crate::evalkit::{EvalError, EvalSummary};
use crate::losses::{self, BatchSimilarities, LossError, LossWeights, Objective, Phase, Toggles, TrainMode};
use crate::numkit::{self, Matrix, NumError, Rng};
use crate::sinkhorn::{self, OtConfig, SinkhornError, TransportPlan};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("corpus has {records} training records, fewer than one batch of {batch_size}")]
    CorpusTooSmall { records: usize, batch_size: usize },
    #[error("checkpoint does not match corpus: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sinkhorn(#[from] SinkhornError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Epochs of cross-lingual-only training in two-stage mode.
    pub stage1_epochs: usize,
    /// Two-stage only: stop training the source encoder and drop the
    /// cross-lingual losses in stage 2.
    pub freeze_cl_in_stage2: bool,
    /// Evaluate on the validation split every this many epochs; 0 disables.
    pub eval_every: usize,
    pub threshold_mode: ThresholdMode,
    pub word_loss_reduction: WordLossReduction,
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub ot: OtConfig,
    pub optimizer: OptimizerConfig,
    pub toggles: Toggles,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 30,
            seed: 1,
            mode: TrainMode::EndToEnd,
            stage1_epochs: 10,
            freeze_cl_in_stage2: false,
            eval_every: 1,
            threshold_mode: ThresholdMode::Above,
            word_loss_reduction: WordLossReduction::Mean,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            ot: OtConfig::default(),
            optimizer: OptimizerConfig::default(),
            toggles: Toggles::ALL,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!(
                "batch_size must be at least 2 for contrastive losses, got {}",
                self.batch_size
            )));
        }
        if self.mode == TrainMode::TwoStage && self.epochs > 0 && self.stage1_epochs >= self.epochs {
            return Err(TrainError::Config(format!(
                "stage1_epochs ({}) must be smaller than epochs ({})",
                self.stage1_epochs, self.epochs
            )));
        }
        if self.model.embed_dim == 0 || self.model.output_dim == 0 {
            return Err(TrainError::Config("model dimensions must be positive".into()));
        }
        self.toggles.validate(self.mode)?;
        self.weights.validate()?;
        self.ot.validate()?;
        self.optimizer.validate()?;
        Ok(())
    }

    /// Which losses are active during `epoch` (0-based).
    pub fn phase_for(&self, epoch: usize) -> Phase {
        match self.mode {
            TrainMode::EndToEnd => Phase::Joint,
            TrainMode::TwoStage if epoch < self.stage1_epochs => Phase::CrossLingualOnly,
            TrainMode::TwoStage if self.freeze_cl_in_stage2 => Phase::CrossModalOnly,
            TrainMode::TwoStage => Phase::Joint,
        }
    }

    pub fn model_shape(&self, corpus: &CorpusConfig) -> ModelShape {
        ModelShape {
            src_vocab: corpus.source_vocab,
            tgt_vocab: corpus.target_vocab,
            feat_dim: corpus.latent_dim,
            embed_dim: self.model.embed_dim,
            output_dim: self.model.output_dim,
        }
    }
}

fn frozen_blocks(phase: Phase) -> &'static [Block] {
    match phase {
        Phase::Joint => &[],
        Phase::CrossLingualOnly => &[Block::VisionProjection],
        Phase::CrossModalOnly => &[Block::SrcTokenTable, Block::SrcProjection],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub epoch: usize,
    pub phase: Phase,
    pub cm_instance: f64,
    pub kd: f64,
    pub cl_instance: f64,
    pub word: f64,
    pub total: f64,
    /// Pairs whose Sinkhorn solve hit the iteration cap.
    pub ot_unconverged: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalLogRecord {
    pub epoch: usize,
    pub step: u64,
    pub sum_r: f64,
}

/// One JSON-lines log entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEntry {
    Step(TrainLogRecord),
    Eval(EvalLogRecord),
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<TrainLogRecord>,
    pub evals: Vec<EvalLogRecord>,
}

impl TrainOutput {
    pub fn log_entries(&self) -> Vec<LogEntry> {
        let mut entries: Vec<LogEntry> = self.log.iter().cloned().map(LogEntry::Step).collect();
        for e in &self.evals {
            let pos = entries
                .iter()
                .position(|x| matches!(x, LogEntry::Step(r) if r.step > e.step))
                .unwrap_or(entries.len());
            entries.insert(pos, LogEntry::Eval(e.clone()));
        }
        entries
    }
}

impl From<&Triple> for EncoderInput {
    fn from(t: &Triple) -> Self {
        EncoderInput {
            src_tokens: t.source_tokens.clone(),
            tgt_tokens: t.target_tokens.clone(),
            vision: t.vision(),
        }
    }
}

/// Word-level view of one aligned pair.
#[derive(Clone, Debug)]
pub struct PairAlignment {
    pub similarity: Matrix,
    pub plan: TransportPlan,
    pub labels: PseudoLabelMatrix,
}

/// Solves OT on a word similarity matrix and thresholds the plan.
pub fn align_similarity(similarity: Matrix, ot: &OtConfig, mode: ThresholdMode) -> Result<PairAlignment> {
    let plan = sinkhorn::sinkhorn_solve(&similarity, ot)?;
    let labels = alignkit::pseudo_labels_with_mode(&plan.plan, mode);
    Ok(PairAlignment {
        similarity,
        plan,
        labels,
    })
}

/// Word alignment of one record under the current encoders.
pub fn align_pair(params: &ModelParams, record: &Triple, ot: &OtConfig, mode: ThresholdMode) -> Result<PairAlignment> {
    let src = encoders::encode_text(&record.source_tokens, encoders::Language::Source, params)?;
    let tgt = encoders::encode_text(&record.target_tokens, encoders::Language::Target, params)?;
    let c = numkit::cosine_matrix(&src.word_reps, &tgt.word_reps)?;
    align_similarity(c, ot, mode)
}

/// Constant targets of one step: pseudo-labels per pair and the teacher matrix.
#[derive(Clone, Debug, Default)]
pub struct StepTargets {
    pub labels: Vec<PseudoLabelMatrix>,
    pub teacher: Option<Matrix>,
}

/// Loss, output gradients and the forward state of one batch.
pub struct BatchOutcome {
    pub objective: Objective,
    pub grads: OutputGrads,
    pub cache: encoders::ForwardCache,
    pub targets: StepTargets,
    pub similarities: BatchSimilarities,
    pub ot_unconverged: usize,
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, cols: usize) -> Result<Matrix> {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    let n = data.len() / cols.max(1);
    Ok(Matrix::new(n, cols, data)?)
}

/// Forward pass, objective and output gradients for one batch.
///
/// With `frozen` set, its pseudo-labels and teacher replace the ones that
/// would be derived from the current parameters.
pub fn batch_objective(
    params: &ModelParams,
    inputs: &[EncoderInput],
    cfg: &TrainConfig,
    phase: Phase,
    frozen: Option<&StepTargets>,
) -> Result<BatchOutcome> {
    let b = inputs.len();
    let d = params.shape().output_dim;
    let (enc, cache) = encoders::forward_batch(inputs, params)?;
    let src_sent = stack_rows(enc.src.iter().map(|e| e.sentence_rep.as_slice()), d)?;
    let tgt_sent = stack_rows(enc.tgt.iter().map(|e| e.sentence_rep.as_slice()), d)?;
    let vision = stack_rows(enc.vision.iter().map(|v| v.as_slice()), d)?;

    let toggles = cfg.toggles;
    let cm_on = phase != Phase::CrossLingualOnly;
    let cl_on = phase != Phase::CrossModalOnly;

    let s_cm = numkit::cosine_matrix(&vision, &tgt_sent)?;
    let s_cl_sent = numkit::cosine_matrix(&src_sent, &tgt_sent)?;
    let s_cl_word = if cm_on && toggles.kd_word && frozen.is_none() {
        let mut m = Matrix::zeros(b, b);
        for i in 0..b {
            for j in 0..b {
                m[(i, j)] = alignkit::maxsim_similarity(&enc.src[i].word_reps, &enc.tgt[j].word_reps)?;
            }
        }
        m
    } else {
        Matrix::zeros(b, b)
    };
    let similarities = BatchSimilarities::new(s_cm, s_cl_sent, s_cl_word, cfg.weights.lambda_level)?;

    let teacher = match frozen {
        Some(t) => t.teacher.clone(),
        None => losses::teacher_similarity(&similarities, &toggles).cloned(),
    };

    let mut word_losses = Vec::new();
    let mut word_grads = Vec::new();
    let mut labels_used = Vec::new();
    let mut ot_unconverged = 0;
    if cl_on && toggles.word_align {
        for i in 0..b {
            let c = numkit::cosine_matrix(&enc.src[i].word_reps, &enc.tgt[i].word_reps)?;
            let labels = match frozen {
                Some(t) => t.labels[i].clone(),
                None => {
                    let a = align_similarity(c.clone(), &cfg.ot, cfg.threshold_mode)?;
                    if !a.plan.converged {
                        ot_unconverged += 1;
                    }
                    a.labels
                }
            };
            word_losses.push(alignkit::word_alignment_loss_with(&c, &labels, cfg.word_loss_reduction)?);
            word_grads.push(alignkit::word_alignment_loss_grad_with(&c, &labels, cfg.word_loss_reduction)?);
            labels_used.push(labels);
        }
    }

    let objective = losses::total_objective_with_teacher(
        &similarities,
        teacher.as_ref(),
        &word_losses,
        &cfg.weights,
        &toggles,
        phase,
    )?;

    let mut grads = OutputGrads::zeros_like(&enc);
    if cm_on {
        let (d_vis, d_tgt) = numkit::cosine_matrix_backward(&vision, &tgt_sent, &objective.grad_s_cm)?;
        for i in 0..b {
            add_into(&mut grads.vision[i], d_vis.row(i));
            add_into(&mut grads.tgt_sentence[i], d_tgt.row(i));
        }
    }
    if cl_on && toggles.cl_instance {
        let (d_src, d_tgt) = numkit::cosine_matrix_backward(&src_sent, &tgt_sent, &objective.grad_s_cl_sent)?;
        for i in 0..b {
            add_into(&mut grads.src_sentence[i], d_src.row(i));
            add_into(&mut grads.tgt_sentence[i], d_tgt.row(i));
        }
    }
    for (i, g) in word_grads.iter().enumerate() {
        let g = g.scale(objective.word_loss_weight);
        let (d_src, d_tgt) = numkit::cosine_matrix_backward(&enc.src[i].word_reps, &enc.tgt[i].word_reps, &g)?;
        grads.src_words[i].add_scaled(1.0, &d_src)?;
        grads.tgt_words[i].add_scaled(1.0, &d_tgt)?;
    }

    Ok(BatchOutcome {
        objective,
        grads,
        cache,
        targets: StepTargets {
            labels: labels_used,
            teacher,
        },
        similarities,
        ot_unconverged,
    })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Loss and parameter gradients of one batch without updating anything.
pub fn loss_and_param_grads(
    params: &ModelParams,
    inputs: &[EncoderInput],
    cfg: &TrainConfig,
    phase: Phase,
    frozen: Option<&StepTargets>,
) -> Result<(BatchOutcome, ParamGrads)> {
    let outcome = batch_objective(params, inputs, cfg, phase, frozen)?;
    let pg = encoders::backward(&outcome.grads, &outcome.cache, params)?;
    Ok((outcome, pg))
}

/// Trains from freshly initialized parameters.
pub fn train(corpus_cfg: &CorpusConfig, records: &[Triple], cfg: &TrainConfig) -> Result<TrainOutput> {
    train_with_eval(corpus_cfg, records, &[], cfg)
}

/// [`train`] with periodic evaluation on `val_records`.
pub fn train_with_eval(
    corpus_cfg: &CorpusConfig,
    records: &[Triple],
    val_records: &[Triple],
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut params = ModelParams::init(cfg.model_shape(corpus_cfg), cfg.seed);
    let mut out = TrainOutput {
        params: params.clone(),
        log: Vec::new(),
        evals: Vec::new(),
    };
    if cfg.epochs == 0 {
        return Ok(out);
    }
    if records.len() < cfg.batch_size {
        return Err(TrainError::CorpusTooSmall {
            records: records.len(),
            batch_size: cfg.batch_size,
        });
    }
    let inputs: Vec<EncoderInput> = records.iter().map(EncoderInput::from).collect();
    let mut rng = Rng::new(cfg.seed, 7);
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    for epoch in 0..cfg.epochs {
        let phase = cfg.phase_for(epoch);
        rng.shuffle(&mut order);
        for chunk in order.chunks_exact(cfg.batch_size) {
            let started = Instant::now();
            let batch: Vec<EncoderInput> = chunk.iter().map(|&i| inputs[i].clone()).collect();
            let outcome = batch_objective(&params, &batch, cfg, phase, None)?;
            encoders::backward_and_step(
                &outcome.grads,
                &outcome.cache,
                &mut params,
                &cfg.optimizer,
                frozen_blocks(phase),
            )?;
            let c = outcome.objective.components;
            out.log.push(TrainLogRecord {
                step: params.step(),
                epoch,
                phase,
                cm_instance: c.cm_instance,
                kd: c.kd,
                cl_instance: c.cl_instance,
                word: c.word,
                total: outcome.objective.total,
                ot_unconverged: outcome.ot_unconverged,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && !val_records.is_empty() {
            let summary = evaluate(&params, val_records)?;
            out.evals.push(EvalLogRecord {
                epoch,
                step: params.step(),
                sum_r: summary.sum_r,
            });
        }
    }
    out.params = params;
    Ok(out)
}

/// Retrieval on `records` using only the cross-modal network: vision
/// projection and target-language encoder.
pub fn evaluate(params: &ModelParams, records: &[Triple]) -> Result<EvalSummary> {
    if records.is_empty() {
        return Err(TrainError::Eval(EvalError::EmptyRanks));
    }
    let shape = *params.shape();
    let d = shape.output_dim;
    let mut vision = Vec::with_capacity(records.len() * d);
    let mut text = Vec::with_capacity(records.len() * d);
    for rec in records {
        if rec.vision_feature.len() != shape.feat_dim {
            return Err(TrainError::Mismatch(format!(
                "record {} has vision dimension {}, checkpoint expects {}",
                rec.id,
                rec.vision_feature.len(),
                shape.feat_dim
            )));
        }
        let v = encoders::encode_vision(&rec.vision(), params)?;
        let t = encoders::encode_text(&rec.target_tokens, encoders::Language::Target, params).map_err(|e| match e {
            EncoderError::OutOfVocabulary { .. } => TrainError::Mismatch(e.to_string()),
            other => TrainError::Encoder(other),
        })?;
        vision.extend_from_slice(v.as_slice());
        text.extend_from_slice(t.sentence_rep.as_slice());
    }
    let n = records.len();
    let s = numkit::cosine_matrix(&Matrix::new(n, d, vision)?, &Matrix::new(n, d, text)?)?;
    Ok(EvalSummary::from_similarity(&s)?)
}

/// Expected SumR of a random ranking over `candidates` items.
pub fn chance_sum_r(candidates: usize) -> f64 {
    let c = candidates as f64;
    2.0 * crate::evalkit::RECALL_KS
        .iter()
        .map(|&k| 100.0 * (k as f64).min(c) / c)
        .sum::<f64>()
}

/// Agreement between pseudo-label argmaxes and gold word alignments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentAgreement {
    pub gold_pairs: usize,
    /// Argmax lands on exactly the gold target position.
    pub position_matches: usize,
    /// Argmax lands on a position holding the gold target token.
    pub token_matches: usize,
}

impl AlignmentAgreement {
    pub fn token_rate(&self) -> f64 {
        self.token_matches as f64 / self.gold_pairs.max(1) as f64
    }

    pub fn position_rate(&self) -> f64 {
        self.position_matches as f64 / self.gold_pairs.max(1) as f64
    }
}

pub fn pseudo_label_agreement(
    params: &ModelParams,
    records: &[Triple],
    ot: &OtConfig,
    mode: ThresholdMode,
) -> Result<AlignmentAgreement> {
    let mut agg = AlignmentAgreement::default();
    for rec in records {
        let a = align_pair(params, rec, ot, mode)?;
        for &(s, t) in &rec.gold_alignment {
            let best = alignkit::argmax(a.labels.labels.row(s));
            agg.gold_pairs += 1;
            if best == t {
                agg.position_matches += 1;
            }
            if rec.target_tokens[best] == rec.target_tokens[t] {
                agg.token_matches += 1;
            }
        }
    }
    Ok(agg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, NoiseModel};

    fn tiny_corpus() -> crate::corpus::Corpus {
        generate_corpus(&CorpusConfig {
            concept_vocab: 12,
            source_vocab: 14,
            target_vocab: 14,
            latent_dim: 6,
            sentence_len_range: (2, 4),
            noise: NoiseModel::default(),
            sizes: (24, 8, 8),
            seed: 5,
        })
        .unwrap()
    }

    #[test]
    fn zero_epochs_returns_init() {
        let c = tiny_corpus();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(&c.config, &c.train, &cfg).unwrap();
        assert!(out.log.is_empty());
        assert_eq!(out.params, ModelParams::init(cfg.model_shape(&c.config), cfg.seed));
    }

    #[test]
    fn config_errors() {
        let c = tiny_corpus();
        let cfg = TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&c.config, &c.train, &cfg), Err(TrainError::Config(_))));
        let cfg = TrainConfig {
            mode: TrainMode::TwoStage,
            stage1_epochs: 3,
            epochs: 3,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 64,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&c.config, &c.train, &cfg),
            Err(TrainError::CorpusTooSmall { records: 24, batch_size: 64 })
        ));
    }

    #[test]
    fn log_totals_match_components() {
        let c = tiny_corpus();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train(&c.config, &c.train, &cfg).unwrap();
        assert_eq!(out.log.len(), 6);
        for r in &out.log {
            let w = cfg.weights.alpha * r.cm_instance + (1.0 - cfg.weights.alpha) * r.kd + r.cl_instance + r.word;
            assert!((w - r.total).abs() < 1e-9);
        }
    }

    #[test]
    fn two_stage_phases() {
        let cfg = TrainConfig {
            mode: TrainMode::TwoStage,
            stage1_epochs: 2,
            epochs: 4,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.phase_for(1), Phase::CrossLingualOnly);
        assert_eq!(cfg.phase_for(2), Phase::Joint);
        let frozen = TrainConfig {
            freeze_cl_in_stage2: true,
            ..cfg
        };
        assert_eq!(frozen.phase_for(3), Phase::CrossModalOnly);
    }

    #[test]
    fn stage_one_leaves_vision_untouched() {
        let c = tiny_corpus();
        let cfg = TrainConfig {
            mode: TrainMode::TwoStage,
            stage1_epochs: 1,
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let params = ModelParams::init(cfg.model_shape(&c.config), cfg.seed);
        let inputs: Vec<EncoderInput> = c.train[..8].iter().map(EncoderInput::from).collect();
        let (outcome, grads) = loss_and_param_grads(&params, &inputs, &cfg, Phase::CrossLingualOnly, None).unwrap();
        assert_eq!(outcome.objective.components.cm_instance, 0.0);
        assert_eq!(outcome.objective.components.kd, 0.0);
        assert!(grads.block(Block::VisionProjection).data().iter().all(|&g| g == 0.0));

        let out = train(&c.config, &c.train, &cfg).unwrap();
        let phases: Vec<Phase> = out.log.iter().map(|r| r.phase).collect();
        assert_eq!(phases, [vec![Phase::CrossLingualOnly; 3], vec![Phase::Joint; 3]].concat());
    }

    #[test]
    fn frozen_stage_two_keeps_source_encoder() {
        let c = tiny_corpus();
        let cfg = TrainConfig {
            mode: TrainMode::TwoStage,
            stage1_epochs: 1,
            epochs: 2,
            batch_size: 8,
            freeze_cl_in_stage2: true,
            ..TrainConfig::default()
        };
        let short = train(&c.config, &c.train, &cfg).unwrap();
        let long = train(&c.config, &c.train, &TrainConfig { epochs: 3, ..cfg.clone() }).unwrap();
        let s2: Vec<_> = short.log.iter().filter(|r| r.phase == Phase::CrossModalOnly).collect();
        assert_eq!(s2.len(), 3);
        assert!(s2.iter().all(|r| r.cl_instance == 0.0 && r.word == 0.0));
        // Stage 1 is identical in both runs; stage 2 never touches the source side.
        for b in [Block::SrcTokenTable, Block::SrcProjection] {
            assert_eq!(short.params.block(b), long.params.block(b));
        }
        assert_ne!(
            short.params.block(Block::VisionProjection),
            long.params.block(Block::VisionProjection)
        );
    }

    #[test]
    fn chance_level() {
        assert!((chance_sum_r(200) - 16.0).abs() < 1e-12);
        assert!((chance_sum_r(5) - 2.0 * (20.0 + 100.0 + 100.0)).abs() < 1e-12);
    }
}
