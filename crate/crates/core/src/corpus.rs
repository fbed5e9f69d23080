//! Deterministic synthetic (vision, source sentence, noisy target sentence)
//! triples and their JSON-lines storage.
//!
//! Both languages are images of one hidden concept sequence through fixed
//! concept→token maps. Vision features are the mean of per-concept latent
//! vectors plus Gaussian noise. Target sentences of the training split pass
//! through a noise channel (substitution, deletion, insertion, local
//! reordering) standing in for machine translation errors; validation and
//! test targets are clean.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numkit::{Rng, Vector};

/// Attempts at drawing a non-empty noisy target before giving up.
pub const NOISE_RETRY_LIMIT: usize = 16;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILES: [&str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("record {id}: noise left an empty target sentence after {NOISE_RETRY_LIMIT} attempts")]
    Degenerate { id: u64 },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("corpus manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub substitution_prob: f64,
    pub deletion_prob: f64,
    pub insertion_prob: f64,
    pub reorder_window: usize,
    pub vision_noise_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            substitution_prob: 0.3,
            deletion_prob: 0.05,
            insertion_prob: 0.05,
            reorder_window: 1,
            vision_noise_sigma: 0.1,
        }
    }
}

impl NoiseModel {
    pub fn clean() -> Self {
        Self {
            substitution_prob: 0.0,
            deletion_prob: 0.0,
            insertion_prob: 0.0,
            reorder_window: 0,
            vision_noise_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub concept_vocab: usize,
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub latent_dim: usize,
    pub sentence_len_range: (usize, usize),
    pub noise: NoiseModel,
    /// Record counts for (train, val, test).
    pub sizes: (usize, usize, usize),
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            concept_vocab: 200,
            source_vocab: 240,
            target_vocab: 240,
            latent_dim: 32,
            sentence_len_range: (4, 8),
            noise: NoiseModel::default(),
            sizes: (2000, 200, 200),
            seed: 42,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CorpusError::Config(m));
        if self.concept_vocab == 0 {
            return fail("concept_vocab must be positive".into());
        }
        if self.source_vocab < self.concept_vocab || self.target_vocab < self.concept_vocab {
            return fail(format!(
                "source_vocab ({}) and target_vocab ({}) must be >= concept_vocab ({})",
                self.source_vocab, self.target_vocab, self.concept_vocab
            ));
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be positive".into());
        }
        let (lo, hi) = self.sentence_len_range;
        if lo < 2 || hi < lo {
            return fail(format!("sentence_len_range ({lo}, {hi}) needs 2 <= min <= max"));
        }
        let (tr, va, te) = self.sizes;
        if tr == 0 || va == 0 || te == 0 {
            return fail("every split size must be at least 1".into());
        }
        let n = &self.noise;
        for (name, p) in [
            ("substitution_prob", n.substitution_prob),
            ("deletion_prob", n.deletion_prob),
            ("insertion_prob", n.insertion_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} not in [0,1]"));
            }
        }
        if n.substitution_prob + n.deletion_prob > 1.0 {
            return fail("substitution_prob + deletion_prob exceeds 1".into());
        }
        if !(n.vision_noise_sigma >= 0.0) {
            return fail("vision_noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

/// One aligned record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triple {
    pub id: u64,
    pub vision_feature: Vec<f64>,
    pub source_tokens: Vec<usize>,
    pub target_tokens: Vec<usize>,
    /// (source position, target position) pairs that survived the noise.
    pub gold_alignment: Vec<(usize, usize)>,
}

impl Triple {
    pub fn vision(&self) -> Vector {
        Vector::new(self.vision_feature.clone()).expect("finite vision feature")
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.source_tokens.is_empty() || self.target_tokens.is_empty() {
            return Err("empty token sequence".into());
        }
        if self.vision_feature.iter().any(|x| !x.is_finite()) {
            return Err("non-finite vision feature".into());
        }
        for &(s, t) in &self.gold_alignment {
            if s >= self.source_tokens.len() || t >= self.target_tokens.len() {
                return Err(format!("gold pair ({s}, {t}) out of range"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub train: Vec<Triple>,
    pub val: Vec<Triple>,
    pub test: Vec<Triple>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn file_name(self) -> &'static str {
        SPLIT_FILES[self as usize]
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (train|val|test)")),
        }
    }
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Token-level counts of what the noise channel did to one split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NoiseStats {
    pub clean_tokens: usize,
    pub substituted: usize,
    pub deleted: usize,
    pub inserted: usize,
}

/// Fixed concept→token maps and concept latents.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub source_of: Vec<usize>,
    pub target_of: Vec<usize>,
    pub latents: Vec<Vec<f64>>,
}

impl Lexicon {
    pub fn build(cfg: &CorpusConfig) -> Self {
        let mut rng = Rng::new(cfg.seed, 0);
        let mut pick = |vocab: usize| {
            let mut ids: Vec<usize> = (0..vocab).collect();
            rng.shuffle(&mut ids);
            ids.truncate(cfg.concept_vocab);
            ids
        };
        let source_of = pick(cfg.source_vocab);
        let target_of = pick(cfg.target_vocab);
        let latents = (0..cfg.concept_vocab)
            .map(|_| (0..cfg.latent_dim).map(|_| rng.normal()).collect())
            .collect();
        Self {
            source_of,
            target_of,
            latents,
        }
    }
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    generate_corpus_with_stats(cfg).map(|(c, _)| c)
}

/// Like [`generate_corpus`], also reporting noise counts per split.
pub fn generate_corpus_with_stats(cfg: &CorpusConfig) -> Result<(Corpus, [NoiseStats; 3])> {
    cfg.validate()?;
    let lex = Lexicon::build(cfg);
    let sizes = [cfg.sizes.0, cfg.sizes.1, cfg.sizes.2];
    let mut next_id = 0u64;
    let mut splits: Vec<Vec<Triple>> = Vec::with_capacity(3);
    let mut stats = [NoiseStats::default(); 3];
    for (k, split) in Split::ALL.into_iter().enumerate() {
        let mut rng = Rng::new(cfg.seed, 1 + k as u64);
        let noisy = split == Split::Train;
        let mut records = Vec::with_capacity(sizes[k]);
        for _ in 0..sizes[k] {
            records.push(generate_record(cfg, &lex, next_id, noisy, &mut rng, &mut stats[k])?);
            next_id += 1;
        }
        splits.push(records);
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok((
        Corpus {
            config: cfg.clone(),
            train,
            val,
            test,
        },
        stats,
    ))
}

fn generate_record(
    cfg: &CorpusConfig,
    lex: &Lexicon,
    id: u64,
    noisy: bool,
    rng: &mut Rng,
    stats: &mut NoiseStats,
) -> Result<Triple> {
    let (lo, hi) = cfg.sentence_len_range;
    let len = rng.between(lo, hi);
    let concepts: Vec<usize> = (0..len).map(|_| rng.below(cfg.concept_vocab)).collect();
    let source_tokens = concepts.iter().map(|&c| lex.source_of[c]).collect();

    let inv = 1.0 / len as f64;
    let vision_feature = (0..cfg.latent_dim)
        .map(|k| {
            let mean: f64 = concepts.iter().map(|&c| lex.latents[c][k]).sum::<f64>() * inv;
            round_sig9(mean + cfg.noise.vision_noise_sigma * rng.normal())
        })
        .collect();

    let (target, local) = if noisy {
        noisy_target(cfg, lex, &concepts, rng).ok_or(CorpusError::Degenerate { id })?
    } else {
        let t = concepts.iter().enumerate().map(|(p, &c)| (lex.target_of[c], Some(p))).collect();
        (t, NoiseStats::default())
    };
    stats.clean_tokens += len;
    stats.substituted += local.substituted;
    stats.deleted += local.deleted;
    stats.inserted += local.inserted;

    let gold_alignment = target
        .iter()
        .enumerate()
        .filter_map(|(t, &(_, origin))| origin.map(|s| (s, t)))
        .collect::<BTreeMap<_, _>>()
        .into_iter()
        .collect();
    Ok(Triple {
        id,
        vision_feature,
        source_tokens,
        target_tokens: target.into_iter().map(|(tok, _)| tok).collect(),
        gold_alignment,
    })
}

type Tagged = Vec<(usize, Option<usize>)>;

fn noisy_target(
    cfg: &CorpusConfig,
    lex: &Lexicon,
    concepts: &[usize],
    rng: &mut Rng,
) -> Option<(Tagged, NoiseStats)> {
    let n = &cfg.noise;
    for _ in 0..NOISE_RETRY_LIMIT {
        let mut stats = NoiseStats::default();
        let mut out: Tagged = Vec::with_capacity(concepts.len() + 2);
        for (pos, &c) in concepts.iter().enumerate() {
            let u = rng.uniform();
            if u < n.substitution_prob {
                out.push((rng.below(cfg.target_vocab), None));
                stats.substituted += 1;
            } else if u < n.substitution_prob + n.deletion_prob {
                stats.deleted += 1;
            } else {
                out.push((lex.target_of[c], Some(pos)));
            }
            if rng.uniform() < n.insertion_prob {
                out.push((rng.below(cfg.target_vocab), None));
                stats.inserted += 1;
            }
        }
        if n.reorder_window > 0 && out.len() > 1 {
            for i in 0..out.len() {
                let j = (i + rng.between(0, n.reorder_window)).min(out.len() - 1);
                out.swap(i, j);
            }
        }
        if !out.is_empty() {
            return Some((out, stats));
        }
    }
    None
}

/// Writes one JSON object per line; vision features carry 9 significant digits.
pub fn write_corpus(records: &[Triple], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        let mut rec = rec.clone();
        rec.vision_feature.iter_mut().for_each(|x| *x = round_sig9(*x));
        serde_json::to_writer(&mut buf, &rec).map_err(std::io::Error::from)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Triple>> {
    let file = fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message,
        };
        let rec: Triple = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        rec.check().map_err(malformed)?;
        records.push(rec);
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub records: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config: CorpusConfig,
    pub files: BTreeMap<String, SplitEntry>,
}

impl CorpusManifest {
    /// Hash over the three split hashes, identifying the corpus content.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for name in SPLIT_FILES {
            if let Some(e) = self.files.get(name) {
                h.update(name.as_bytes());
                h.update(e.sha256.as_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Writes the three splits and `manifest.json` into `dir`.
pub fn write_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<CorpusManifest> {
    fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        let records = corpus.split(split);
        write_corpus(records, &path)?;
        files.insert(
            split.file_name().to_string(),
            SplitEntry {
                records: records.len(),
                sha256: sha256_file(&path)?,
            },
        );
    }
    let manifest = CorpusManifest {
        config: corpus.config.clone(),
        files,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::from)?;
    fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))
}

/// Reads a directory written by [`write_corpus_dir`], verifying file hashes.
pub fn read_corpus_dir(dir: &Path) -> Result<(Corpus, CorpusManifest)> {
    let manifest = read_manifest(dir)?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        if let Some(entry) = manifest.files.get(split.file_name()) {
            if sha256_file(&path)? != entry.sha256 {
                return Err(CorpusError::Manifest(format!(
                    "{} does not match its recorded hash",
                    split.file_name()
                )));
            }
        }
        splits.push(read_corpus(&path)?);
    }
    let test = splits.pop().unwrap_or_default();
    let val = splits.pop().unwrap_or_default();
    let train = splits.pop().unwrap_or_default();
    Ok((
        Corpus {
            config: manifest.config.clone(),
            train,
            val,
            test,
        },
        manifest,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: NoiseModel) -> CorpusConfig {
        CorpusConfig {
            concept_vocab: 20,
            source_vocab: 25,
            target_vocab: 30,
            latent_dim: 4,
            sentence_len_range: (2, 5),
            noise,
            sizes: (30, 5, 5),
            seed: 9,
        }
    }

    #[test]
    fn clean_noise_gives_identity_alignment() {
        let cfg = small(NoiseModel::clean());
        let corpus = generate_corpus(&cfg).unwrap();
        let lex = Lexicon::build(&cfg);
        for rec in corpus.train.iter().chain(&corpus.test) {
            assert_eq!(rec.source_tokens.len(), rec.target_tokens.len());
            let identity: Vec<_> = (0..rec.source_tokens.len()).map(|i| (i, i)).collect();
            assert_eq!(rec.gold_alignment, identity);
            for (&s, &t) in rec.source_tokens.iter().zip(&rec.target_tokens) {
                let c = lex.source_of.iter().position(|&x| x == s).unwrap();
                assert_eq!(lex.target_of[c], t);
            }
        }
    }

    #[test]
    fn full_deletion_is_degenerate() {
        let cfg = small(NoiseModel {
            deletion_prob: 1.0,
            substitution_prob: 0.0,
            insertion_prob: 0.0,
            ..NoiseModel::default()
        });
        assert!(matches!(generate_corpus(&cfg), Err(CorpusError::Degenerate { id: 0 })));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small(NoiseModel::default());
        cfg.source_vocab = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = small(NoiseModel::default());
        cfg.sentence_len_range = (1, 3);
        assert!(cfg.validate().is_err());
        let mut cfg = small(NoiseModel::default());
        cfg.noise.substitution_prob = 0.7;
        cfg.noise.deletion_prob = 0.4;
        assert!(cfg.validate().is_err());
        let mut cfg = small(NoiseModel::default());
        cfg.sizes.1 = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gold_pairs_encode_the_same_concept() {
        let cfg = small(NoiseModel {
            substitution_prob: 0.4,
            deletion_prob: 0.1,
            insertion_prob: 0.2,
            reorder_window: 2,
            vision_noise_sigma: 0.1,
        });
        let corpus = generate_corpus(&cfg).unwrap();
        let lex = Lexicon::build(&cfg);
        for rec in &corpus.train {
            for &(s, t) in &rec.gold_alignment {
                let c = lex.source_of.iter().position(|&x| x == rec.source_tokens[s]).unwrap();
                assert_eq!(rec.target_tokens[t], lex.target_of[c]);
            }
        }
    }

    #[test]
    fn empty_collection_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        write_corpus(&[], &p).unwrap();
        assert_eq!(fs::read(&p).unwrap().len(), 0);
        assert!(read_corpus(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        let corpus = generate_corpus(&small(NoiseModel::default())).unwrap();
        write_corpus(&corpus.val[..2], &p).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{\"id\": 3, \"oops\": true}\n");
        fs::write(&p, text).unwrap();
        match read_corpus(&p) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn round_sig9_is_idempotent() {
        for x in [0.123456789123, -3.3e-7, 12345.6789012, 0.0] {
            let r = round_sig9(x);
            assert_eq!(r, round_sig9(r));
            assert!((r - x).abs() <= 5e-9 * x.abs().max(1e-300));
        }
    }
}
