//! Toy dual-stream encoders: token table + linear projection with mean
//! pooling for text, a single linear projection for vision.
//!
//! The target-language table and projection are stored once and serve both
//! the cross-lingual word pathway and the cross-modal sentence pathway, so
//! their gradients from both pathways accumulate into the same buffers.

mod checkpoint;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numkit::{Matrix, NumError, Rng, Vector};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, BLOB_FILE, MANIFEST_FILE};
pub use optim::{adam_step, OptimizerConfig};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("token id {id} out of range for {language:?} vocabulary of size {vocab}")]
    OutOfVocabulary {
        language: Language,
        id: usize,
        vocab: usize,
    },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("vision feature has dimension {got}, expected {expected}")]
    FeatureDim { got: usize, expected: usize },
    #[error("forward cache was built at step {cache_step} but parameters are at step {param_step}")]
    StaleCache { cache_step: u64, param_step: u64 },
    #[error("gradient shape mismatch: {0}")]
    GradShape(String),
    #[error("invalid optimizer config: {0}")]
    Optimizer(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Num(#[from] NumError),
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Language {
    Source,
    Target,
}

/// Parameter blocks, in checkpoint order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    SrcTokenTable,
    TgtTokenTable,
    SrcProjection,
    TgtProjection,
    VisionProjection,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::SrcTokenTable,
        Block::TgtTokenTable,
        Block::SrcProjection,
        Block::TgtProjection,
        Block::VisionProjection,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Block::SrcTokenTable => "src_token_table",
            Block::TgtTokenTable => "tgt_token_table",
            Block::SrcProjection => "src_projection",
            Block::TgtProjection => "tgt_projection",
            Block::VisionProjection => "vision_projection",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }

    pub fn is_source(self) -> bool {
        matches!(self, Block::SrcTokenTable | Block::SrcProjection)
    }
}

/// Width of the encoders; vocabulary sizes and feature width come from the corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub output_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            output_dim: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub feat_dim: usize,
    pub embed_dim: usize,
    pub output_dim: usize,
}

impl ModelShape {
    pub fn block_dims(&self, block: Block) -> (usize, usize) {
        match block {
            Block::SrcTokenTable => (self.src_vocab, self.embed_dim),
            Block::TgtTokenTable => (self.tgt_vocab, self.embed_dim),
            Block::SrcProjection | Block::TgtProjection => (self.embed_dim, self.output_dim),
            Block::VisionProjection => (self.feat_dim, self.output_dim),
        }
    }
}

/// Per-block read counters used to audit which parameters a code path reads.
#[derive(Debug, Default)]
struct AccessCounters([AtomicU64; 5]);

impl Clone for AccessCounters {
    fn clone(&self) -> Self {
        let c = Self::default();
        for (dst, src) in c.0.iter().zip(&self.0) {
            dst.store(src.load(Ordering::Relaxed), Ordering::Relaxed);
        }
        c
    }
}

/// Trainable parameters plus Adam moment accumulators.
#[derive(Clone, Debug)]
pub struct ModelParams {
    shape: ModelShape,
    blocks: Vec<Matrix>,
    first_moments: Vec<Matrix>,
    second_moments: Vec<Matrix>,
    step: u64,
    access: AccessCounters,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self.step == other.step
            && self.blocks == other.blocks
            && self.first_moments == other.first_moments
            && self.second_moments == other.second_moments
    }
}

impl ModelParams {
    /// Uniform initialization in `±1/sqrt(fan_in)`. A token table is a linear
    /// map over one-hot inputs, so its fan-in is the vocabulary size.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let blocks = Block::ALL
            .iter()
            .map(|&b| {
                let (rows, cols) = shape.block_dims(b);
                let bound = 1.0 / (rows.max(1) as f64).sqrt();
                let mut rng = Rng::new(seed, 0x1000 + b.index() as u64);
                Matrix::from_fn(rows, cols, |_, _| rng.uniform_in(-bound, bound))
            })
            .collect();
        Self::from_blocks(shape, blocks, 0).expect("init shapes are consistent")
    }

    /// Builds parameters with zeroed moments. Block order is [`Block::ALL`].
    pub fn from_blocks(shape: ModelShape, blocks: Vec<Matrix>, step: u64) -> Result<Self> {
        if blocks.len() != Block::ALL.len() {
            return Err(EncoderError::Checkpoint(format!(
                "expected {} blocks, got {}",
                Block::ALL.len(),
                blocks.len()
            )));
        }
        for (b, m) in Block::ALL.iter().zip(&blocks) {
            if m.shape() != shape.block_dims(*b) {
                return Err(EncoderError::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    b.name(),
                    m.shape(),
                    shape.block_dims(*b)
                )));
            }
        }
        let zeros: Vec<Matrix> = blocks.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Ok(Self {
            shape,
            first_moments: zeros.clone(),
            second_moments: zeros,
            blocks,
            step,
            access: AccessCounters::default(),
        })
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Read access to a parameter block; counted for auditing.
    pub fn block(&self, b: Block) -> &Matrix {
        self.access.0[b.index()].fetch_add(1, Ordering::Relaxed);
        &self.blocks[b.index()]
    }

    pub fn moments(&self, b: Block) -> (&Matrix, &Matrix) {
        (&self.first_moments[b.index()], &self.second_moments[b.index()])
    }

    pub fn access_count(&self, b: Block) -> u64 {
        self.access.0[b.index()].load(Ordering::Relaxed)
    }

    pub fn reset_access_counts(&self) {
        for c in &self.access.0 {
            c.store(0, Ordering::Relaxed);
        }
    }

    /// Mutable access for optimizers and finite-difference probes.
    pub fn block_mut(&mut self, b: Block) -> &mut Matrix {
        &mut self.blocks[b.index()]
    }

    pub(crate) fn parts_mut(&mut self, b: Block) -> (&mut Matrix, &mut Matrix, &mut Matrix) {
        let i = b.index();
        (
            &mut self.blocks[i],
            &mut self.first_moments[i],
            &mut self.second_moments[i],
        )
    }

    pub(crate) fn set_moments(&mut self, b: Block, m: Matrix, v: Matrix) {
        self.first_moments[b.index()] = m;
        self.second_moments[b.index()] = v;
    }

    pub(crate) fn advance_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    /// Concatenated little-endian bytes of every block then every moment, in order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.blocks
            .iter()
            .chain(&self.first_moments)
            .chain(&self.second_moments)
            .flat_map(|m| m.data().iter().flat_map(|x| x.to_le_bytes()))
            .collect()
    }

    fn table_and_projection(&self, language: Language) -> (&Matrix, &Matrix) {
        match language {
            Language::Source => (self.block(Block::SrcTokenTable), self.block(Block::SrcProjection)),
            Language::Target => (self.block(Block::TgtTokenTable), self.block(Block::TgtProjection)),
        }
    }
}

/// Word representations of one sentence plus their mean (the sentence vector).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedSentence {
    pub word_reps: Matrix,
    pub sentence_rep: Vector,
}

fn check_tokens(tokens: &[usize], language: Language, vocab: usize) -> Result<()> {
    if tokens.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(EncoderError::OutOfVocabulary { language, id, vocab });
    }
    Ok(())
}

pub fn encode_text(tokens: &[usize], language: Language, params: &ModelParams) -> Result<EncodedSentence> {
    let (table, projection) = params.table_and_projection(language);
    check_tokens(tokens, language, table.rows())?;
    let d = projection.cols();
    let mut word_reps = Matrix::zeros(tokens.len(), d);
    for (i, &tok) in tokens.iter().enumerate() {
        let out = word_reps.row_mut(i);
        for (k, &e) in table.row(tok).iter().enumerate() {
            for (o, p) in out.iter_mut().zip(projection.row(k)) {
                *o += e * p;
            }
        }
    }
    let inv_len = 1.0 / tokens.len() as f64;
    let sentence: Vec<f64> = word_reps.col_sums().into_iter().map(|x| x * inv_len).collect();
    Ok(EncodedSentence {
        word_reps,
        sentence_rep: Vector::new(sentence)?,
    })
}

pub fn encode_vision(feature: &Vector, params: &ModelParams) -> Result<Vector> {
    let projection = params.block(Block::VisionProjection);
    if feature.dim() != projection.rows() {
        return Err(EncoderError::FeatureDim {
            got: feature.dim(),
            expected: projection.rows(),
        });
    }
    let mut out = vec![0.0; projection.cols()];
    for (&f, row) in feature.as_slice().iter().zip(projection.row_iter()) {
        for (o, p) in out.iter_mut().zip(row) {
            *o += f * p;
        }
    }
    Ok(Vector::new(out)?)
}

/// One aligned record as seen by the encoders.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    pub src_tokens: Vec<usize>,
    pub tgt_tokens: Vec<usize>,
    pub vision: Vector,
}

/// Outputs of a batch forward pass.
#[derive(Clone, Debug)]
pub struct BatchEncoding {
    pub src: Vec<EncodedSentence>,
    pub tgt: Vec<EncodedSentence>,
    pub vision: Vec<Vector>,
}

/// Inputs retained from a forward pass, tied to the parameter step.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    inputs: Vec<EncoderInput>,
    param_step: u64,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

pub fn forward_batch(inputs: &[EncoderInput], params: &ModelParams) -> Result<(BatchEncoding, ForwardCache)> {
    let mut enc = BatchEncoding {
        src: Vec::with_capacity(inputs.len()),
        tgt: Vec::with_capacity(inputs.len()),
        vision: Vec::with_capacity(inputs.len()),
    };
    for rec in inputs {
        enc.src.push(encode_text(&rec.src_tokens, Language::Source, params)?);
        enc.tgt.push(encode_text(&rec.tgt_tokens, Language::Target, params)?);
        enc.vision.push(encode_vision(&rec.vision, params)?);
    }
    let cache = ForwardCache {
        inputs: inputs.to_vec(),
        param_step: params.step(),
    };
    Ok((enc, cache))
}

/// Gradients of the loss with respect to every encoder output of a batch.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub src_words: Vec<Matrix>,
    pub src_sentence: Vec<Vec<f64>>,
    pub tgt_words: Vec<Matrix>,
    pub tgt_sentence: Vec<Vec<f64>>,
    pub vision: Vec<Vec<f64>>,
}

impl OutputGrads {
    /// All-zero gradients shaped like `enc`.
    pub fn zeros_like(enc: &BatchEncoding) -> Self {
        let words = |s: &[EncodedSentence]| -> Vec<Matrix> {
            s.iter()
                .map(|e| Matrix::zeros(e.word_reps.rows(), e.word_reps.cols()))
                .collect()
        };
        let sent = |s: &[EncodedSentence]| -> Vec<Vec<f64>> {
            s.iter().map(|e| vec![0.0; e.sentence_rep.dim()]).collect()
        };
        Self {
            src_words: words(&enc.src),
            src_sentence: sent(&enc.src),
            tgt_words: words(&enc.tgt),
            tgt_sentence: sent(&enc.tgt),
            vision: enc.vision.iter().map(|v| vec![0.0; v.dim()]).collect(),
        }
    }
}

/// Gradient buffers, one per [`Block`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    blocks: Vec<Matrix>,
}

impl ParamGrads {
    pub fn zeros(shape: &ModelShape) -> Self {
        Self {
            blocks: Block::ALL
                .iter()
                .map(|&b| {
                    let (r, c) = shape.block_dims(b);
                    Matrix::zeros(r, c)
                })
                .collect(),
        }
    }

    pub fn block(&self, b: Block) -> &Matrix {
        &self.blocks[b.index()]
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Matrix {
        &mut self.blocks[b.index()]
    }
}

fn accumulate_text(
    tokens: &[usize],
    language: Language,
    params: &ModelParams,
    d_words: &Matrix,
    d_sentence: &[f64],
    grads: &mut ParamGrads,
) -> Result<()> {
    let (table_block, proj_block) = match language {
        Language::Source => (Block::SrcTokenTable, Block::SrcProjection),
        Language::Target => (Block::TgtTokenTable, Block::TgtProjection),
    };
    let table = &params.blocks[table_block.index()];
    let projection = &params.blocks[proj_block.index()];
    let d = projection.cols();
    if d_words.shape() != (tokens.len(), d) || d_sentence.len() != d {
        return Err(EncoderError::GradShape(format!(
            "{language:?} word grads {:?} / sentence grad {} for {} tokens of width {d}",
            d_words.shape(),
            d_sentence.len(),
            tokens.len()
        )));
    }
    // Mean pooling hands each token 1/L of the sentence gradient.
    let inv_len = 1.0 / tokens.len() as f64;
    let mut g = vec![0.0; d];
    for (i, &tok) in tokens.iter().enumerate() {
        for ((gk, w), s) in g.iter_mut().zip(d_words.row(i)).zip(d_sentence) {
            *gk = w + s * inv_len;
        }
        let emb = table.row(tok);
        {
            let d_proj = &mut grads.blocks[proj_block.index()];
            for (k, &e) in emb.iter().enumerate() {
                for (dp, gk) in d_proj.row_mut(k).iter_mut().zip(&g) {
                    *dp += e * gk;
                }
            }
        }
        let d_table = &mut grads.blocks[table_block.index()];
        let d_row = d_table.row_mut(tok);
        for (k, dt) in d_row.iter_mut().enumerate() {
            *dt += crate::numkit::dot(projection.row(k), &g);
        }
    }
    Ok(())
}

/// Chain rule from output gradients to parameter gradients.
///
/// Fails with [`EncoderError::StaleCache`] if the parameters moved since the
/// forward pass that produced `cache`.
pub fn backward(grads: &OutputGrads, cache: &ForwardCache, params: &ModelParams) -> Result<ParamGrads> {
    if cache.param_step != params.step() {
        return Err(EncoderError::StaleCache {
            cache_step: cache.param_step,
            param_step: params.step(),
        });
    }
    let n = cache.inputs.len();
    if [
        grads.src_words.len(),
        grads.src_sentence.len(),
        grads.tgt_words.len(),
        grads.tgt_sentence.len(),
        grads.vision.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(EncoderError::GradShape(format!(
            "output gradients do not cover the {n} cached records"
        )));
    }
    let mut out = ParamGrads::zeros(params.shape());
    for (i, rec) in cache.inputs.iter().enumerate() {
        accumulate_text(
            &rec.src_tokens,
            Language::Source,
            params,
            &grads.src_words[i],
            &grads.src_sentence[i],
            &mut out,
        )?;
        accumulate_text(
            &rec.tgt_tokens,
            Language::Target,
            params,
            &grads.tgt_words[i],
            &grads.tgt_sentence[i],
            &mut out,
        )?;
        let dv = &grads.vision[i];
        let d_proj = out.block_mut(Block::VisionProjection);
        if dv.len() != d_proj.cols() {
            return Err(EncoderError::GradShape(format!(
                "vision grad width {} vs {}",
                dv.len(),
                d_proj.cols()
            )));
        }
        for (k, &f) in rec.vision.as_slice().iter().enumerate() {
            for (dp, g) in d_proj.row_mut(k).iter_mut().zip(dv) {
                *dp += f * g;
            }
        }
    }
    Ok(out)
}

/// [`backward`] followed by one Adam update of every non-frozen block.
pub fn backward_and_step(
    grads: &OutputGrads,
    cache: &ForwardCache,
    params: &mut ModelParams,
    opt: &OptimizerConfig,
    frozen: &[Block],
) -> Result<ParamGrads> {
    let pg = backward(grads, cache, params)?;
    adam_step(params, &pg, opt, frozen)?;
    Ok(pg)
}
