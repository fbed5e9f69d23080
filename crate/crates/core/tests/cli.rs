use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cl2cm_core::cli::GlobalConfig;
use cl2cm_core::evalkit::EvalSummary;

const CORPUS_TOML: &str = "\
concept_vocab = 24
source_vocab = 30
target_vocab = 30
latent_dim = 8
sizes = [48, 16, 24]
seed = 3
";

const TRAIN_TOML: &str = "\
[train]
batch_size = 8
epochs = 2
eval_every = 1

[train.model]
embed_dim = 8
output_dim = 8
";

fn cl2cm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cl2cm")).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_corpus(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("corpus.toml");
    fs::write(&cfg, CORPUS_TOML).unwrap();
    let out = dir.join("corpus");
    let o = cl2cm(&["gen-corpus", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    out
}

fn train_ckpt(dir: &Path, corpus: &Path, name: &str) -> std::path::PathBuf {
    let cfg = dir.join("train.toml");
    fs::write(&cfg, TRAIN_TOML).unwrap();
    let out = dir.join(name);
    let o = cl2cm(&["train", "--config", p(&cfg), "--corpus", p(corpus), "--out", p(&out)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    out
}

#[test]
fn no_arguments_is_a_usage_error() {
    let o = cl2cm(&[]);
    assert_eq!(o.status.code(), Some(1));
    let err = text(&o.stderr);
    assert!(err.starts_with("ERROR:usage:"), "{err}");
    assert!(err.contains("Usage"));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    assert_eq!(cl2cm(&["frobnicate"]).status.code(), Some(1));
    let o = cl2cm(&["gradcheck", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).starts_with("ERROR:usage:"));
}

#[test]
fn help_lists_every_subcommand() {
    let o = cl2cm(&["--help"]);
    assert!(o.status.success());
    let out = text(&o.stdout);
    for sub in ["gen-corpus", "train", "eval", "align", "sinkhorn", "gradcheck", "ablate", "render"] {
        assert!(out.contains(sub), "{sub} missing from help");
    }
    let o = cl2cm(&["sinkhorn", "--help"]);
    assert!(text(&o.stdout).contains("[default: 0.1]"));
}

#[test]
fn sinkhorn_on_one_by_one() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.tsv");
    fs::write(&input, "0.3\n").unwrap();
    let o = cl2cm(&["sinkhorn", "--input", p(&input)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(text(&o.stdout), "1.0\n");
}

#[test]
fn sinkhorn_plan_has_uniform_marginals() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("s.tsv");
    fs::write(&input, "0.9\t0.1\t-0.2\n0.0\t0.5\t0.3\n").unwrap();
    let out = dir.path().join("plan.tsv");
    let o = cl2cm(&["sinkhorn", "--input", p(&input), "--out", p(&out)]);
    assert!(o.status.success());
    let plan: Vec<Vec<f64>> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .map(|l| l.split('\t').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(plan.len(), 2);
    for row in &plan {
        assert!((row.iter().sum::<f64>() - 0.5).abs() < 1e-6);
    }
    for j in 0..3 {
        assert!((plan.iter().map(|r| r[j]).sum::<f64>() - 1.0 / 3.0).abs() < 1e-6);
    }
}

#[test]
fn runtime_errors_exit_two_with_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = cl2cm(&["sinkhorn", "--input", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    let err = text(&o.stderr);
    assert!(err.starts_with("ERROR:io:"), "{err}");
    assert_eq!(err.lines().count(), 1);

    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "1\tx\n").unwrap();
    let o = cl2cm(&["sinkhorn", "--input", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).starts_with("ERROR:input:"));

    let o = cl2cm(&["gen-corpus", "--set", "corpus.latent_dim=0", "--out", p(&dir.path().join("c"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).starts_with("ERROR:corpus:"));
}

#[test]
fn gradcheck_reports_every_check() {
    let o = cl2cm(&["gradcheck"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    for name in ["infonce_symmetric", "word_alignment_loss", "kd_loss", "total_objective"] {
        let line = out.lines().find(|l| l.starts_with(&format!("{name}\t"))).unwrap();
        assert!(line.ends_with("PASS"), "{line}");
    }
}

#[test]
fn pipeline_train_eval_render_align() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_corpus(dir.path());
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "manifest.json", "config.toml"] {
        assert!(corpus.join(f).is_file(), "{f}");
    }
    let ckpt = train_ckpt(dir.path(), &corpus, "ckpt");
    for f in ["manifest.json", "params.bin", "train_log.jsonl", "config.toml"] {
        assert!(ckpt.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(ckpt.join("train_log.jsonl")).unwrap();
    let kinds: Vec<String> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.iter().filter(|k| *k == "step").count(), 12);
    assert_eq!(kinds.iter().filter(|k| *k == "eval").count(), 2);

    let report = dir.path().join("report.json");
    let o = cl2cm(&["eval", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--out", p(&report)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let summary = EvalSummary::from_json(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(summary.sum_r > 0.0 && summary.sum_r <= 600.0);

    let o = cl2cm(&["render", "--report", p(&report)]);
    assert!(o.status.success());
    let md = text(&o.stdout);
    assert!(md.contains("SumR"));
    assert!(md.contains(&format!("{:.1}", summary.sum_r)));

    let o = cl2cm(&["align", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--pair", "0"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    for section in ["# record 0", "# plan", "# gamma", "# fallback_rows", "# pseudo_labels"] {
        assert!(out.contains(section), "{section}");
    }
    let o = cl2cm(&["align", "--checkpoint", p(&ckpt), "--corpus", p(&corpus), "--pair", "99999"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).starts_with("ERROR:input:"));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_corpus(dir.path());
    let first = train_ckpt(dir.path(), &corpus, "first");
    let echo = first.join("config.toml");
    let parsed = GlobalConfig::from_toml(&fs::read_to_string(&echo).unwrap(), "train", &[]).unwrap();
    assert_eq!(parsed.train.epochs, 2);
    assert_eq!(parsed.corpus.concept_vocab, 24);

    let second = dir.path().join("second");
    let o = cl2cm(&["train", "--config", p(&echo), "--corpus", p(&corpus), "--out", p(&second)]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(
        fs::read(first.join("params.bin")).unwrap(),
        fs::read(second.join("params.bin")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(first.join("config.toml")).unwrap(),
        fs::read_to_string(second.join("config.toml")).unwrap()
    );
}

#[test]
fn overrides_win_over_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_corpus(dir.path());
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TRAIN_TOML).unwrap();
    let out = dir.path().join("ckpt");
    let o = cl2cm(&[
        "train", "--config", p(&cfg), "--set", "train.epochs=1", "--corpus", p(&corpus), "--out", p(&out),
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let echoed = GlobalConfig::from_toml(&fs::read_to_string(out.join("config.toml")).unwrap(), "train", &[]).unwrap();
    assert_eq!(echoed.train.epochs, 1);
    assert_eq!(echoed.train.batch_size, 8);
}

#[test]
fn ablate_writes_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = gen_corpus(dir.path());
    let cfg = dir.path().join("train.toml");
    fs::write(&cfg, TRAIN_TOML).unwrap();
    let table = dir.path().join("out").join("ablation.csv");
    let o = cl2cm(&[
        "ablate", "--config", p(&cfg), "--corpus", p(&corpus), "--out", p(&table), "--seeds", "1,2", "--epochs", "1",
    ]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let csv = fs::read_to_string(&table).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "toggles,sumr_seed1,sumr_seed2,mean");
    assert_eq!(lines.len(), 8);
    assert!(lines[1].starts_with("baseline,"));
    assert!(lines[7].starts_with("cl_instance+word_align+kd_sent+kd_word,"));
    for row in &lines[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 4);
        let vals: Vec<f64> = cells[1..].iter().map(|c| c.parse().unwrap()).collect();
        assert!((vals[2] - (vals[0] + vals[1]) / 2.0).abs() < 1e-4);
    }
    assert!(dir.path().join("out").join("config.toml").is_file());
}
