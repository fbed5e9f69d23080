//! Command dispatcher for the `cl2cm` binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Every failure is
//! reported on one stderr line starting with `ERROR:<code>:`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, CorpusConfig, Split, Triple};
use crate::encoders;
use crate::evalkit;
use crate::gradcheck;
use crate::losses::Toggles;
use crate::numkit::Matrix;
use crate::sinkhorn::{self, OtConfig};
use crate::trainer::{self, TrainConfig};

pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Train(#[from] trainer::TrainError),
    #[error(transparent)]
    Checkpoint(#[from] encoders::EncoderError),
    #[error(transparent)]
    Sinkhorn(#[from] sinkhorn::SinkhornError),
    #[error(transparent)]
    Eval(#[from] evalkit::EvalError),
    #[error("{0}")]
    GradCheck(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Io { .. } => "io",
            CliError::Corpus(_) => "corpus",
            CliError::Train(_) => "train",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Sinkhorn(_) => "sinkhorn",
            CliError::Eval(_) => "eval",
            CliError::GradCheck(_) => "gradcheck",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "cl2cm",
    version,
    about = "Cross-lingual to cross-modal knowledge transfer toolkit",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML config: [corpus] and [train] sections, or bare keys of the command's own section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one value, e.g. `--set train.epochs=5` (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus directory.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus seed (overrides corpus.seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train both networks and write a checkpoint directory.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training seed (overrides train.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Retrieval metrics of a checkpoint on one corpus split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// JSON report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transport plan, threshold and pseudo-labels for one record.
    Align {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Record id from the corpus files.
        #[arg(long)]
        pair: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve entropic OT for a similarity matrix given as TSV.
    Sinkhorn {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = OtConfig::default().epsilon_entropy)]
        epsilon: f64,
        #[arg(long, default_value_t = OtConfig::default().max_iterations)]
        max_iterations: usize,
        #[arg(long, default_value_t = OtConfig::default().marginal_tolerance)]
        tolerance: f64,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Train and evaluate the seven-row toggle grid over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated training seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Overrides train.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Render an eval JSON report as a markdown table.
    Render {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Every configurable value, as read from TOML.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub corpus: CorpusConfig,
    pub train: TrainConfig,
}

const SECTIONS: [&str; 2] = ["corpus", "train"];

impl GlobalConfig {
    /// Parses TOML text. A document without section headers is read as the
    /// bare keys of `bare_section`.
    pub fn from_toml(text: &str, bare_section: &str, overrides: &[String]) -> Result<Self> {
        let doc: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{e}")))?;
        let sectioned = doc.keys().filter(|k| SECTIONS.contains(&k.as_str())).count();
        let mut doc = if sectioned == doc.len() {
            doc
        } else if sectioned == 0 {
            let mut t = toml::Table::new();
            t.insert(bare_section.to_string(), toml::Value::Table(doc));
            t
        } else {
            return Err(CliError::Config(
                "config mixes [corpus]/[train] sections with top-level keys".into(),
            ));
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, bare_section: &str, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(io_err(p))?,
            None => String::new(),
        };
        Self::from_toml(&text, bare_section, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not SECTION.KEY=VALUE")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Usage(format!("override {assignment:?} is not SECTION.KEY=VALUE")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = keys.split_last().expect("at least two keys");
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {assignment:?}: {k} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn echo_config(dir: &Path, cfg: &GlobalConfig) -> Result<()> {
    write_file(&dir.join(CONFIG_ECHO_FILE), &cfg.to_toml())
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Shortest decimal that survives rounding to 12 significant digits.
pub fn fmt_sig12(x: f64) -> String {
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    format!("{rounded:?}")
}

pub fn matrix_to_tsv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| fmt_sig12(x)).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    out
}

/// Parses a tab- or space-separated matrix; blank lines and `#` comments are skipped.
pub fn parse_tsv_matrix(text: &str) -> std::result::Result<Matrix, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|c| c.parse::<f64>().map_err(|e| format!("line {}: {c:?}: {e}", i + 1)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!("line {}: {} columns, expected {}", i + 1, row.len(), first.len()));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err("empty matrix".into());
    }
    Matrix::from_rows(&rows).map_err(|e| e.to_string())
}

fn find_record<'a>(c: &'a corpus::Corpus, id: u64) -> Option<&'a Triple> {
    Split::ALL
        .iter()
        .flat_map(|&s| c.split(s).iter())
        .find(|r| r.id == id)
}

/// Training config stored with a checkpoint, or defaults if absent.
fn checkpoint_train_config(manifest: &encoders::CheckpointManifest) -> TrainConfig {
    serde_json::from_value::<GlobalConfig>(manifest.config.clone())
        .map(|g| g.train)
        .unwrap_or_default()
}

fn run(cmd: Command, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenCorpus { cfg, seed, out } => {
            let mut global = GlobalConfig::load(cfg.config.as_deref(), "corpus", &cfg.overrides)?;
            if let Some(s) = seed {
                global.corpus.seed = s;
            }
            let c = corpus::generate_corpus(&global.corpus)?;
            let manifest = corpus::write_corpus_dir(&c, &out)?;
            echo_config(&out, &global)?;
            let _ = writeln!(stdout, "wrote corpus {} to {}", manifest.content_hash(), out.display());
        }
        Command::Train {
            cfg,
            corpus: dir,
            out,
            seed,
            epochs,
        } => {
            let mut global = GlobalConfig::load(cfg.config.as_deref(), "train", &cfg.overrides)?;
            let (c, _) = corpus::read_corpus_dir(&dir)?;
            global.corpus = c.config.clone();
            if let Some(s) = seed {
                global.train.seed = s;
            }
            if let Some(e) = epochs {
                global.train.epochs = e;
            }
            let result = trainer::train_with_eval(&c.config, &c.train, &c.val, &global.train)?;
            let config_json = serde_json::to_value(&global).map_err(|e| CliError::Config(e.to_string()))?;
            encoders::save_checkpoint(&out, &result.params, global.train.seed, config_json)?;
            let mut log = String::new();
            for entry in result.log_entries() {
                log.push_str(&serde_json::to_string(&entry).expect("log entry serializes"));
                log.push('\n');
            }
            write_file(&out.join(TRAIN_LOG_FILE), &log)?;
            echo_config(&out, &global)?;
            let last = result.log.last().map(|r| r.total).unwrap_or(f64::NAN);
            let _ = writeln!(
                stdout,
                "trained {} steps, final loss {}, checkpoint {}",
                result.params.step(),
                fmt_sig12(last),
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            corpus: dir,
            split,
            out,
        } => {
            let (params, _) = encoders::load_checkpoint(&checkpoint)?;
            let (c, _) = corpus::read_corpus_dir(&dir)?;
            let summary = trainer::evaluate(&params, c.split(split))?;
            let json = summary.to_json();
            match out {
                Some(p) => write_file(&p, &json)?,
                None => {
                    let _ = stdout.write_all(json.as_bytes());
                }
            }
        }
        Command::Align {
            checkpoint,
            corpus: dir,
            pair,
            out,
        } => {
            let (params, manifest) = encoders::load_checkpoint(&checkpoint)?;
            let (c, _) = corpus::read_corpus_dir(&dir)?;
            let rec = find_record(&c, pair).ok_or_else(|| CliError::Input(format!("no record with id {pair}")))?;
            let tc = checkpoint_train_config(&manifest);
            let a = trainer::align_pair(&params, rec, &tc.ot, tc.threshold_mode)?;
            let mut text = format!(
                "# record {}\n# source_tokens\t{}\n# target_tokens\t{}\n",
                rec.id,
                join(&rec.source_tokens),
                join(&rec.target_tokens)
            );
            text.push_str(&format!(
                "# plan {}x{} iterations {} converged {}\n",
                a.plan.plan.rows(),
                a.plan.plan.cols(),
                a.plan.iterations_used,
                a.plan.converged
            ));
            text.push_str(&matrix_to_tsv(&a.plan.plan));
            text.push_str(&format!("# gamma\n{}\n", fmt_sig12(a.labels.threshold_used)));
            text.push_str(&format!("# fallback_rows\t{}\n", join(&a.labels.fallback_rows)));
            text.push_str("# pseudo_labels\n");
            text.push_str(&matrix_to_tsv(&a.labels.labels));
            emit(out.as_deref(), &text, stdout)?;
        }
        Command::Sinkhorn {
            input,
            out,
            epsilon,
            max_iterations,
            tolerance,
        } => {
            let text = fs::read_to_string(&input).map_err(io_err(&input))?;
            let s = parse_tsv_matrix(&text).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
            let cfg = OtConfig {
                epsilon_entropy: epsilon,
                max_iterations,
                marginal_tolerance: tolerance,
            };
            let plan = sinkhorn::sinkhorn_solve(&s, &cfg)?;
            if !plan.converged {
                let _ = writeln!(
                    stderr,
                    "warning: not converged after {} iterations (marginal error {:e})",
                    plan.iterations_used, plan.final_marginal_error
                );
            }
            emit(out.as_deref(), &matrix_to_tsv(&plan.plan), stdout)?;
        }
        Command::Gradcheck { seed } => {
            let checks = gradcheck::run_suite(seed)?;
            let _ = writeln!(stdout, "check\tmax_rel_error\tentries\tstatus");
            for c in &checks {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                let _ = writeln!(stdout, "{}\t{:.3e}\t{}\t{}", c.name, c.max_rel_error, c.entries, status);
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(CliError::GradCheck(format!(
                    "relative error above {:e} in {}",
                    gradcheck::TOLERANCE,
                    failed.join(", ")
                )));
            }
        }
        Command::Ablate {
            cfg,
            corpus: dir,
            out,
            seeds,
            epochs,
        } => {
            if seeds.is_empty() {
                return Err(CliError::Usage("--seeds needs at least one seed".into()));
            }
            let mut global = GlobalConfig::load(cfg.config.as_deref(), "train", &cfg.overrides)?;
            let (c, _) = corpus::read_corpus_dir(&dir)?;
            global.corpus = c.config.clone();
            if let Some(e) = epochs {
                global.train.epochs = e;
            }
            let table = ablation_table(&c, &global.train, &seeds)?;
            write_file(&out, &table)?;
            echo_config(&parent_dir(&out), &global)?;
            let _ = stdout.write_all(table.as_bytes());
        }
        Command::Render { report, out } => {
            let text = fs::read_to_string(&report).map_err(io_err(&report))?;
            let md = evalkit::render_report(&text)?;
            emit(out.as_deref(), &md, stdout)?;
        }
    }
    Ok(())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            let _ = stdout.write_all(text.as_bytes());
            Ok(())
        }
    }
}

/// Test-split SumR for every toggle row and seed.
pub fn ablation_sumr(c: &corpus::Corpus, base: &TrainConfig, seeds: &[u64]) -> trainer::Result<Vec<(Toggles, Vec<f64>)>> {
    Toggles::ablation_grid()
        .into_iter()
        .map(|toggles| {
            let sums = seeds
                .iter()
                .map(|&seed| {
                    let cfg = TrainConfig {
                        toggles,
                        seed,
                        eval_every: 0,
                        ..base.clone()
                    };
                    let out = trainer::train(&c.config, &c.train, &cfg)?;
                    Ok(trainer::evaluate(&out.params, &c.test)?.sum_r)
                })
                .collect::<trainer::Result<Vec<f64>>>()?;
            Ok((toggles, sums))
        })
        .collect()
}

pub fn ablation_table(c: &corpus::Corpus, base: &TrainConfig, seeds: &[u64]) -> trainer::Result<String> {
    let rows = ablation_sumr(c, base, seeds)?;
    let mut out = String::from("toggles");
    for s in seeds {
        out.push_str(&format!(",sumr_seed{s}"));
    }
    out.push_str(",mean\n");
    for (toggles, sums) in rows {
        out.push_str(&toggles.label());
        for v in &sums {
            out.push_str(&format!(",{v:.4}"));
        }
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        out.push_str(&format!(",{mean:.4}\n"));
    }
    Ok(out)
}

/// Parses `args` (program name first) and runs the command.
pub fn dispatch<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = writeln!(stderr, "ERROR:usage: missing subcommand");
                    let _ = write!(stderr, "{}", e.render());
                    1
                }
                _ => {
                    let rendered = e.render().to_string();
                    let first = rendered.lines().next().unwrap_or("invalid arguments");
                    let first = first.trim_start_matches("error: ");
                    let _ = writeln!(stderr, "ERROR:usage: {first}");
                    let _ = write!(stderr, "{rendered}");
                    1
                }
            };
        }
    };
    match run(cli.command, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(stderr, "ERROR:{}: {msg}", e.code());
            e.exit_code()
        }
    }
}
