//! The `vgrammar` command-line tool.
//!
//! Exit codes: 0 on success, 1 on I/O failure, 2 on invalid input or parameters.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{load_corpus, save_corpus, split_corpus, CorpusFormat, CorpusMatrix};
use crate::error::{Error, Result};
use crate::grammar::{build_grammar, truncate_vocabulary, GrammarModel, GrammarParams};
use crate::plsa::{fit_plsa, PlsaConfig, TopicModel};
use crate::serde_util;
use crate::similarity::{
    evaluate, knn_classify, sweep_with, EvalConfig, Measure, SweepGrid, SweepParams,
    SWEEP_CSV_HEADER,
};
use crate::synth::{generate, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "vgrammar",
    version,
    about = "Visual grammar transforms for bag-of-visual-words corpora"
)]
pub struct Cli {
    /// JSON file whose keys mirror flag names; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its ground-truth sidecar.
    Synth(SynthArgs),
    /// Fit a PLSA topic model.
    Fit(FitArgs),
    /// Build the grammar (meaningfulness, synonymy, polysemy) from a corpus and model.
    Grammar(GrammarArgs),
    /// k-NN classification of a test corpus, with evaluation report.
    Classify(ClassifyArgs),
    /// Evaluate every point of a parameter grid into a CSV file.
    Sweep(SweepArgs),
    /// Stratified train/test split of a labelled corpus.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar (default: `<out stem>.truth.json` next to the corpus).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub topics: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = PlsaConfig::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = PlsaConfig::default().tol)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GrammarArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = GrammarParams::default().t_meaning)]
    pub t_meaning: f64,
    #[arg(long, default_value_t = GrammarParams::default().t_synonymy, allow_negative_numbers = true)]
    pub t_synonymy: f64,
    #[arg(long, default_value_t = GrammarParams::default().pmi_floor, allow_negative_numbers = true)]
    pub pmi_floor: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the corpus restricted to meaningful words.
    #[arg(long)]
    pub truncated_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value = "cosine")]
    pub measure: Measure,
    /// Required for `--measure grammatical`. With `--measure cosine` the
    /// histograms are first truncated to the grammar's meaningful words.
    #[arg(long)]
    pub grammar: Option<PathBuf>,
    /// Predictions CSV (default: `<test stem>.predictions.csv`).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Report JSON (default: `<test stem>.report.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// JSON grid: {"n_topics": [..], "t_meaning": [..], "k": [..], "measure": [..]}.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
    #[arg(long, default_value_t = GrammarParams::default().t_synonymy, allow_negative_numbers = true)]
    pub t_synonymy: f64,
    #[arg(long, default_value_t = GrammarParams::default().pmi_floor, allow_negative_numbers = true)]
    pub pmi_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = PlsaConfig::default().max_iters)]
    pub max_iters: usize,
    #[arg(long, default_value_t = PlsaConfig::default().tol)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub train_out: PathBuf,
    #[arg(long)]
    pub test_out: PathBuf,
    #[arg(long, default_value_t = 0.75)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("error: {e}");
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_INVALID
    }
}

/// Appends `--key value` for every key of the `--config` file whose flag is
/// not already on the command line.
fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else { return Ok(args) };
    let table: serde_json::Map<String, serde_json::Value> = serde_util::read_json(&path)?;

    let present: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_owned())
        .collect();
    for (key, value) in table {
        let name = key.replace('_', "-");
        if name == "config" || present.contains(&name) {
            continue;
        }
        let flag = format!("--{name}");
        match value {
            serde_json::Value::Bool(true) => args.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::String(s) => args.extend([flag.into(), s.into()]),
            serde_json::Value::Number(n) => args.extend([flag.into(), n.to_string().into()]),
            other => {
                return Err(Error::ingest(
                    &path,
                    None,
                    format!("key {key:?} has unsupported value {other}"),
                ));
            }
        }
    }
    Ok(args)
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        // Fails only if the pool is already initialized, as in repeated in-process runs.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Grammar(a) => cmd_grammar(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Split(a) => cmd_split(a),
    }
}

fn read_corpus(path: &Path) -> Result<CorpusMatrix> {
    load_corpus(path, CorpusFormat::from_path(path))
}

fn write_corpus(corpus: &CorpusMatrix, path: &Path) -> Result<()> {
    save_corpus(corpus, path, CorpusFormat::from_path(path))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::load(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let (corpus, truth) = generate(&spec)?;
    write_corpus(&corpus, &a.out)?;
    let truth_path = a.truth.unwrap_or_else(|| sibling(&a.out, ".truth.json"));
    truth.save(&truth_path)?;
    println!(
        "wrote {} instances × {} words to {}; ground truth in {}",
        corpus.n_instances(),
        corpus.n_words(),
        a.out.display(),
        truth_path.display()
    );
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let config = PlsaConfig {
        n_topics: a.topics,
        max_iters: a.max_iters,
        tol: a.tol,
        seed: a.seed,
    };
    config.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let model = fit_plsa(&corpus, &config)?;
    model.save(&a.out)?;
    println!(
        "fitted {} topics in {} iterations, log-likelihood {}",
        model.n_topics(),
        model.iterations_run(),
        model.loglik_trace().last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_grammar(a: GrammarArgs) -> Result<()> {
    let params = GrammarParams {
        t_meaning: a.t_meaning,
        t_synonymy: a.t_synonymy,
        pmi_floor: a.pmi_floor,
    };
    params.validate()?;
    let corpus = read_corpus(&a.corpus)?;
    let model = TopicModel::load(&a.model)?;
    let grammar = build_grammar(&corpus, &model, &params)?;
    grammar.save(&a.out)?;
    if let Some(path) = &a.truncated_out {
        let truncation = truncate_vocabulary(&corpus, grammar.meaningfulness())?;
        write_corpus(&truncation.corpus, path)?;
    }
    println!(
        "words removed: {} of {}",
        grammar.n_words() - grammar.effective_vocab_size(),
        grammar.n_words()
    );
    println!("synonym pairs found: {}", grammar.synonym_pairs().len());
    println!("mean polysemy weight: {}", grammar.mean_polysemy_weight());
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> Result<()> {
    if a.measure == Measure::Grammatical && a.grammar.is_none() {
        return Err(Error::InvalidParameter(
            "--measure grammatical requires --grammar".into(),
        ));
    }
    let train = read_corpus(&a.train)?;
    let test = read_corpus(&a.test)?;
    let grammar = a.grammar.as_deref().map(GrammarModel::load).transpose()?;

    let (predictions, effective) = match (a.measure, &grammar) {
        (Measure::Grammatical, Some(g)) => (
            knn_classify(&train, &test, a.k, a.measure, Some(g))?,
            g.effective_vocab_size(),
        ),
        (_, Some(g)) => {
            if g.vocabulary() != train.vocabulary().words() {
                return Err(Error::DimensionMismatch(
                    "grammar vocabulary differs from corpus".into(),
                ));
            }
            let truncation = truncate_vocabulary(&train, g.meaningfulness())?;
            let test_truncated = test.select_columns(&truncation.kept)?;
            (
                knn_classify(&truncation.corpus, &test_truncated, a.k, a.measure, None)?,
                truncation.effective_vocab_size(),
            )
        }
        (_, None) => (
            knn_classify(&train, &test, a.k, a.measure, None)?,
            train.n_words(),
        ),
    };

    let config = EvalConfig {
        measure: a.measure,
        k: a.k,
        n_topics: grammar
            .as_ref()
            .map(|g| g.provenance().n_topics)
            .filter(|&n| n > 0),
        t_meaning: grammar.as_ref().map(|g| g.thresholds().t_meaning),
        t_synonymy: grammar.as_ref().map(|g| g.thresholds().t_synonymy),
        pmi_floor: grammar.as_ref().map(|g| g.thresholds().pmi_floor),
        effective_vocab_size: effective,
    };
    let report = evaluate(&predictions, &test, &config)?;

    let predictions_path = a
        .predictions
        .unwrap_or_else(|| sibling(&a.test, ".predictions.csv"));
    let mut writer =
        csv::Writer::from_path(&predictions_path).map_err(|e| csv_error(&predictions_path, e))?;
    writer
        .write_record(["instance_id", "label"])
        .map_err(|e| csv_error(&predictions_path, e))?;
    for p in &predictions {
        writer
            .write_record([&p.instance_id, &p.label])
            .map_err(|e| csv_error(&predictions_path, e))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(&predictions_path, e))?;

    let report_path = a.report.unwrap_or_else(|| sibling(&a.test, ".report.json"));
    serde_util::write_json(&report, &report_path)?;
    println!(
        "accuracy {} on {} instances",
        report.accuracy,
        test.n_instances()
    );
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidData(format!("{}: {other:?}", path.display())),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let grid: SweepGrid = serde_util::read_json(&a.grid)?;
    if grid.is_empty() {
        return Err(Error::InvalidParameter("sweep grid has no points".into()));
    }
    let params = SweepParams {
        t_synonymy: a.t_synonymy,
        pmi_floor: a.pmi_floor,
        max_iters: a.max_iters,
        tol: a.tol,
        seed: a.seed,
    };
    GrammarParams {
        t_meaning: 0.0,
        t_synonymy: params.t_synonymy,
        pmi_floor: params.pmi_floor,
    }
    .validate()?;
    if a.out.exists() && !a.force {
        return Err(Error::InvalidParameter(format!(
            "{} already exists; pass --force to overwrite",
            a.out.display()
        )));
    }
    let train = read_corpus(&a.train)?;
    let test = read_corpus(&a.test)?;

    let file = OpenOptions::new()
        .write(true)
        .create(true)
        .truncate(true)
        .open(&a.out)
        .map_err(|e| Error::io(&a.out, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let out = a.out.clone();
    let mut emit = |record: &[String]| -> Result<()> {
        writer
            .write_record(record)
            .map_err(|e| csv_error(&out, e))?;
        writer.flush().map_err(|e| Error::io(&out, e))
    };
    emit(&SWEEP_CSV_HEADER.map(String::from))?;
    let reports = sweep_with(&train, &test, &grid, &params, |r| emit(&r.csv_record()))?;
    println!("wrote {} rows to {}", reports.len(), a.out.display());
    std::io::stdout()
        .flush()
        .map_err(|e| Error::io("<stdout>", e))
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let (train, test) = split_corpus(&corpus, a.train_fraction, a.seed)?;
    write_corpus(&train, &a.train_out)?;
    write_corpus(&test, &a.test_out)?;
    println!(
        "{} train / {} test instances",
        train.n_instances(),
        test.n_instances()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> std::result::Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("vgrammar").chain(args.iter().copied()))
    }

    #[test]
    fn flags_parse() {
        let cli = parse(&[
            "fit", "--corpus", "c.csv", "--topics", "4", "--seed", "7", "--out", "m.json",
        ])
        .unwrap();
        match cli.command {
            Command::Fit(a) => {
                assert_eq!(a.topics, 4);
                assert_eq!(a.seed, 7);
                assert_eq!(a.max_iters, 500);
            }
            other => panic!("{other:?}"),
        }
        let cli = parse(&[
            "grammar",
            "--corpus",
            "c",
            "--model",
            "m",
            "--pmi-floor",
            "-5",
            "--out",
            "g",
        ])
        .unwrap();
        assert!(
            matches!(cli.command, Command::Grammar(GrammarArgs { pmi_floor, .. }) if pmi_floor == -5.0)
        );
        assert!(parse(&[
            "classify",
            "--train",
            "a",
            "--test",
            "b",
            "--k",
            "1",
            "--measure",
            "euclid"
        ])
        .is_err());
    }

    #[test]
    fn config_keys_fill_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        std::fs::write(
            &cfg,
            r#"{"corpus": "c.csv", "topics": 3, "seed": 9, "out": "m.json", "max_iters": 20}"#,
        )
        .unwrap();
        let args: Vec<OsString> = [
            "vgrammar",
            "fit",
            "--seed",
            "1",
            "--config",
            cfg.to_str().unwrap(),
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let cli = Cli::try_parse_from(expand_config(args).unwrap()).unwrap();
        match cli.command {
            Command::Fit(a) => {
                assert_eq!(a.seed, 1);
                assert_eq!(a.topics, 3);
                assert_eq!(a.max_iters, 20);
                assert_eq!(a.corpus, PathBuf::from("c.csv"));
            }
            other => panic!("{other:?}"),
        }
    }
}
