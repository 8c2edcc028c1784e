//! `nmt` command line: corpus building, training, translation, scoring.
//!
//! Exit codes: 0 on success, 1 for usage and domain errors, 2 when a file
//! cannot be read or written.

use std::ffi::OsString;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use thiserror::Error;

use crate::cells::CellType;
use crate::checkpoint::{self, Checkpoint, CheckpointError};
use crate::corpus::{
    align_pairs, build_vocab, normalize_basmala, parse_tanzil, read_token_lines, split_corpus,
    strip_punctuation_and_tokenize, write_split, CorpusError, InputFormat, Side, Vocabulary,
};
use crate::evaluation::{compare_systems, comparison_csv, report_tsv, BleuConfig, EvalError, Smoothing};
use crate::model::{ModelError, ScoreKind};
use crate::trainer::{self, CheckpointEvent, EncodedPair, TrainConfig, TrainError, TrainState, METRICS_HEADER};

#[derive(Debug, Parser)]
#[command(name = "nmt", version, about = "Attention encoder-decoder translation for verse-aligned corpora")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align, tokenise and split a bilingual corpus; write vocabularies.
    Corpus(CorpusArgs),
    /// Train a model on a directory written by `corpus`.
    Train(TrainArgs),
    /// Greedy-decode source sentences with a trained checkpoint.
    Translate(TranslateArgs),
    /// Corpus BLEU of a candidate file against references.
    Eval(EvalArgs),
    /// BLEU table for several systems against one reference file.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Source-language file (the translated side).
    #[arg(long)]
    pub source: PathBuf,
    /// Target-language file (the Arabic side).
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, value_enum, default_value = "pipe-delimited")]
    pub format: InputFormat,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub min_count: u64,
    /// Split seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Remove Arabic harakat before tokenising.
    #[arg(long)]
    pub strip_diacritics: bool,
    /// Skip the opening-formula split.
    #[arg(long)]
    pub no_basmala: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory produced by `corpus`.
    #[arg(long)]
    pub data: PathBuf,
    /// Where checkpoints and metrics.tsv go.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = CellType::Lstm)]
    pub cell: CellType,
    /// Longest source or target sentence kept, in tokens.
    #[arg(long, default_value_t = 44)]
    pub max_len: usize,
    #[arg(long, default_value_t = 80)]
    pub batch: usize,
    #[arg(long, default_value_t = 40)]
    pub valid_batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Samples between periodic checkpoints.
    #[arg(long, default_value_t = 10_000)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Embedding width.
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    /// Hidden width.
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    #[arg(long, value_enum, default_value_t = ScoreKind::General)]
    pub score: ScoreKind,
    /// Global gradient-norm cap.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// Disable gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Source sentences, one per line; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Cap on emitted tokens per sentence.
    #[arg(long, default_value_t = 44)]
    pub max_len: usize,
    #[arg(long)]
    pub strip_diacritics: bool,
}

#[derive(Debug, Args)]
pub struct BleuArgs {
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
    #[arg(long, value_enum, default_value_t = Smoothing::Epsilon)]
    pub smoothing: Smoothing,
    #[arg(long)]
    pub strip_diacritics: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long)]
    pub references: PathBuf,
    /// Row label in the report.
    #[arg(long, default_value = "system")]
    pub name: String,
    #[command(flatten)]
    pub bleu: BleuArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub references: PathBuf,
    /// `NAME=PATH`, repeatable.
    #[arg(long = "system", required = true, value_parser = parse_system)]
    pub systems: Vec<(String, PathBuf)>,
    /// Also write bar-chart CSV (BLEU in percent) here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub bleu: BleuArgs,
}

fn parse_system(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Domain(String),
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io { .. } => 2,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(source) => CliError::Io {
                context: "corpus".into(),
                source,
            },
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(source) => CliError::Io {
                context: "checkpoint".into(),
                source,
            },
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Callback(inner) => match inner.downcast::<CliError>() {
                Ok(cli) => *cli,
                Err(other) => CliError::Domain(other.to_string()),
            },
            e => CliError::Domain(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Domain(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(CliError::io(path.display().to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(path.display().to_string()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(CliError::io(path.display().to_string()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn tokenize_file(path: &Path, keep_diacritics: bool) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| strip_punctuation_and_tokenize(l, keep_diacritics))
        .collect())
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code. Output goes to `stdout`; diagnostics to standard error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Corpus(a) => cmd_corpus(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Translate(a) => cmd_translate(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Compare(a) => cmd_compare(&a, out),
    }
}

pub fn cmd_corpus(a: &CorpusArgs, out: &mut dyn Write) -> Result<()> {
    info!("corpus config: {a:?}");
    let source = parse_tanzil(open(&a.source)?, a.format)?;
    let target = parse_tanzil(open(&a.target)?, a.format)?;
    let (source, target) = if a.no_basmala {
        (source, target)
    } else {
        normalize_basmala(&source, &target)?
    };
    let pairs = align_pairs(&source, &target, !a.strip_diacritics)?;
    let (train, test) = split_corpus(&pairs, a.train_fraction, a.seed)?;
    let src_vocab = build_vocab(&train, Side::Source, a.min_count)?;
    let tgt_vocab = build_vocab(&train, Side::Target, a.min_count)?;

    fs::create_dir_all(&a.out).map_err(CliError::io(a.out.display().to_string()))?;
    write_split(&a.out, &train, &test).map_err(CliError::io(a.out.display().to_string()))?;
    for (name, v) in [("vocab.src.tsv", &src_vocab), ("vocab.tgt.tsv", &tgt_vocab)] {
        let path = a.out.join(name);
        let mut w = create(&path)?;
        v.write_tsv(&mut w)
            .and_then(|_| w.flush())
            .map_err(CliError::io(path.display().to_string()))?;
    }
    writeln!(
        out,
        "pairs\t{}\ntrain\t{}\ntest\t{}\nsrc_vocab\t{}\ntgt_vocab\t{}",
        pairs.len(),
        train.len(),
        test.len(),
        src_vocab.len(),
        tgt_vocab.len()
    )
    .map_err(CliError::io("stdout"))?;
    Ok(())
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    Ok(Vocabulary::read_tsv(open(path)?)?)
}

fn encode_split(dir: &Path, name: &str, src: &Vocabulary, tgt: &Vocabulary) -> Result<Vec<EncodedPair>> {
    let s = read_token_lines(&dir.join(format!("{name}.src")))?;
    let t = read_token_lines(&dir.join(format!("{name}.tgt")))?;
    if s.len() != t.len() {
        return Err(CliError::Domain(format!(
            "{name}: {} source lines but {} target lines",
            s.len(),
            t.len()
        )));
    }
    Ok(s.iter()
        .zip(&t)
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .map(|(a, b)| EncodedPair::new(src.encode(a), tgt.encode(b)))
        .collect())
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            cell: self.cell,
            max_seq_len: self.max_len,
            train_batch: self.batch,
            valid_batch: self.valid_batch,
            lr: self.lr,
            epochs: self.epochs,
            checkpoint_every: self.checkpoint_every,
            seed: self.seed,
            d: self.embed_dim,
            d_h: self.hidden,
            score: self.score,
            clip_norm: (!self.no_clip).then_some(self.clip),
            ..TrainConfig::default()
        }
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = a.config();
    info!(
        "train config: data={} out={} {}",
        a.data.display(),
        a.out.display(),
        serde_json::to_string(&config).unwrap_or_default()
    );
    let src_vocab = read_vocab(&a.data.join("vocab.src.tsv"))?;
    let tgt_vocab = read_vocab(&a.data.join("vocab.tgt.tsv"))?;
    let train = encode_split(&a.data, "train", &src_vocab, &tgt_vocab)?;
    let valid = encode_split(&a.data, "test", &src_vocab, &tgt_vocab)?;
    info!("{} training pairs, {} validation pairs", train.len(), valid.len());

    fs::create_dir_all(&a.out).map_err(CliError::io(a.out.display().to_string()))?;
    let metrics_path = a.out.join("metrics.tsv");
    fs::write(&metrics_path, format!("{METRICS_HEADER}\n")).map_err(CliError::io(metrics_path.display().to_string()))?;

    let mut save = |event: CheckpointEvent, state: &TrainState| -> trainer::CallbackResult {
        let name = match event {
            CheckpointEvent::Periodic { samples } => format!("checkpoint-{samples}.anmt"),
            CheckpointEvent::EpochEnd { epoch } => {
                let row = state.metrics.last().map(|m| m.tsv_row()).unwrap_or_default();
                let mut f = OpenOptions::new()
                    .append(true)
                    .open(&metrics_path)
                    .map_err(CliError::io(metrics_path.display().to_string()))?;
                writeln!(f, "{row}").map_err(CliError::io(metrics_path.display().to_string()))?;
                format!("epoch-{epoch}.anmt")
            }
            CheckpointEvent::Final => "model.anmt".to_string(),
        };
        let path = a.out.join(name);
        let ckpt = Checkpoint {
            state: state.clone(),
            src_vocab: src_vocab.clone(),
            tgt_vocab: tgt_vocab.clone(),
        };
        checkpoint::save(&path, &ckpt).map_err(CliError::from)?;
        info!("wrote {}", path.display());
        Ok(())
    };
    let state = trainer::train(&config, &train, &valid, src_vocab.len(), tgt_vocab.len(), &mut save)?;
    writeln!(out, "epochs\t{}\nsamples_seen\t{}", state.epochs_done, state.samples_seen).map_err(CliError::io("stdout"))?;
    Ok(())
}

pub fn cmd_translate(a: &TranslateArgs, out: &mut dyn Write) -> Result<()> {
    info!("translate config: {a:?}");
    if a.max_len == 0 {
        return Err(CliError::Domain("--max-len must be at least 1".into()));
    }
    let ckpt = checkpoint::load(&a.model)?;
    let lines: Vec<String> = match &a.input {
        Some(p) => read_lines(p)?,
        None => io::stdin()
            .lock()
            .lines()
            .collect::<io::Result<_>>()
            .map_err(CliError::io("stdin"))?,
    };
    let mut translations = Vec::with_capacity(lines.len());
    for line in &lines {
        let toks = strip_punctuation_and_tokenize(line, !a.strip_diacritics);
        if toks.is_empty() {
            translations.push(String::new());
            continue;
        }
        let ids = ckpt.src_vocab.encode(&toks);
        let dec = ckpt.state.model.greedy_decode(&ids, a.max_len)?;
        translations.push(ckpt.tgt_vocab.decode(&dec.token_ids).join(" "));
    }
    let write_all = |w: &mut dyn Write| -> io::Result<()> {
        for t in &translations {
            writeln!(w, "{t}")?;
        }
        w.flush()
    };
    match &a.output {
        Some(p) => write_all(&mut create(p)?).map_err(CliError::io(p.display().to_string())),
        None => write_all(out).map_err(CliError::io("stdout")),
    }
}

impl BleuArgs {
    fn config(&self) -> BleuConfig {
        BleuConfig {
            max_n: self.max_n,
            smoothing: self.smoothing,
        }
    }
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    info!("eval config: {a:?}");
    let keep = !a.bleu.strip_diacritics;
    let cands = tokenize_file(&a.candidates, keep)?;
    let refs = tokenize_file(&a.references, keep)?;
    let scores = compare_systems(&[(a.name.as_str(), cands)], &refs, &a.bleu.config())?;
    out.write_all(report_tsv(&scores).as_bytes()).map_err(CliError::io("stdout"))
}

pub fn cmd_compare(a: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    info!("compare config: {a:?}");
    let keep = !a.bleu.strip_diacritics;
    let refs = tokenize_file(&a.references, keep)?;
    let mut systems = Vec::with_capacity(a.systems.len());
    for (name, path) in &a.systems {
        systems.push((name.as_str(), tokenize_file(path, keep)?));
    }
    let scores = compare_systems(&systems, &refs, &a.bleu.config())?;
    out.write_all(report_tsv(&scores).as_bytes()).map_err(CliError::io("stdout"))?;
    for s in &scores {
        info!("{}: {:.1}% BLEU", s.system, 100.0 * s.report.bleu);
    }
    if let Some(p) = &a.csv {
        fs::write(p, comparison_csv(&scores)).map_err(CliError::io(p.display().to_string()))?;
    }
    Ok(())
}
