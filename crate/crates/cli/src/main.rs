use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use dner::corpus::{corpus_stats, parse_pubtator, write_pubtator, Document};
use dner::embeddings::{corpus_vocab, load_word2vec_text};
use dner::fixture::CrfFixture;
use dner::gradcheck;
use dner::lexicon::{load_medic, Lexicon};
use dner::pipeline::{score_documents, sentences, train, Checkpoint, ModelConfig};
use dner::tagging::{convert, repair, Scheme};
use dner::EmbeddingTable;

mod conll;

#[derive(Parser)]
#[command(name = "dner", version, about = "Disease mention tagger")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Iob2,
    Iobes,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Iob2 => Scheme::Iob2,
            SchemeArg::Iobes => Scheme::Iobes,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Kv,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Abstract, sentence and mention counts of a PubTator corpus.
    Stats {
        #[arg(env = "DNER_CORPUS")]
        corpus: PathBuf,
    },
    /// Rewrites token/tag columns in another segment representation.
    ConvertSr {
        #[arg(long, value_enum)]
        to: SchemeArg,
        /// Source scheme; guessed per sentence when omitted.
        #[arg(long, value_enum)]
        from: Option<SchemeArg>,
        /// Input file; standard input when omitted.
        input: Option<PathBuf>,
    },
    /// Trains a model and writes the best checkpoint.
    Train {
        #[arg(long, env = "DNER_TRAIN")]
        train: PathBuf,
        #[arg(long, env = "DNER_DEV")]
        dev: Option<PathBuf>,
        /// MEDIC TSV used for dictionary features.
        #[arg(long, env = "DNER_LEXICON")]
        lexicon: Option<PathBuf>,
        /// word2vec text vectors.
        #[arg(long, env = "DNER_EMBEDDINGS")]
        embeddings: Option<PathBuf>,
        /// Binary copy of the restricted table, reused when present.
        #[arg(long, env = "DNER_EMBEDDING_CACHE")]
        embedding_cache: Option<PathBuf>,
        /// key=value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides one configuration key, e.g. `--set epochs=3`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Tags a PubTator corpus with a trained model.
    Predict {
        #[arg(long, env = "DNER_MODEL")]
        model: PathBuf,
        input: PathBuf,
        /// Standard output when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Strict entity-level scores of predicted against gold annotations.
    Evaluate {
        gold: PathBuf,
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        format: ReportFormat,
    },
    /// Scores the paths of a CRF fixture file and decodes it.
    DecodeFixture { fixture: PathBuf },
    /// Compares analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let parsed = parse_pubtator(open(path)?).with_context(|| format!("{}", path.display()))?;
    if !parsed.diagnostics.is_empty() {
        warn!("{}: {} annotation problems", path.display(), parsed.diagnostics.len());
    }
    Ok(parsed.documents)
}

type Out<'a> = &'a mut dyn Write;

fn stats(out: Out, corpus: &Path) -> Result<()> {
    write!(out, "{}", corpus_stats(&read_corpus(corpus)?).to_tsv())?;
    Ok(())
}

fn convert_sr(out: Out, to: Scheme, from: Option<Scheme>, input: Option<&Path>) -> Result<()> {
    let mut text = String::new();
    match input {
        Some(p) => {
            open(p)?.read_to_string(&mut text)?;
        }
        None => {
            io::stdin().read_to_string(&mut text)?;
        }
    }
    let converted = conll::convert_stream(&text, from, |symbols, scheme| {
        let seq = repair(symbols, scheme)?;
        if seq.symbols() != symbols {
            warn!("repaired an invalid {scheme} sentence");
        }
        Ok(convert(&seq, to).symbols())
    })?;
    out.write_all(converted.as_bytes())?;
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<ModelConfig> {
    let mut config = ModelConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        config.apply_str(&text).with_context(|| format!("{}", p.display()))?;
    }
    for o in overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("override {o:?} is not KEY=VALUE");
        };
        config.set(k.trim(), v.trim())?;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn word_table(
    config: &ModelConfig,
    docs: &[Document],
    embeddings: Option<&Path>,
    cache: Option<&Path>,
) -> Result<Option<EmbeddingTable>> {
    if !config.flags.pretrained {
        return Ok(None);
    }
    if let Some(c) = cache.filter(|c| c.exists()) {
        info!("reading cached vectors from {}", c.display());
        let table = EmbeddingTable::load(open(c)?).with_context(|| format!("{}", c.display()))?;
        if table.dim() != config.word_dim {
            bail!(
                "{}: vectors have dimension {}, config wants {}",
                c.display(),
                table.dim(),
                config.word_dim
            );
        }
        return Ok(Some(table));
    }
    let Some(path) = embeddings else {
        bail!("v2_pretrained is on but no --embeddings file was given");
    };
    let vocab = corpus_vocab(&sentences(docs));
    let table = load_word2vec_text(open(path)?, &vocab, Some(config.word_dim), config.seed)
        .with_context(|| format!("{}", path.display()))?;
    info!("{} of {} corpus words have vectors", table.len() - 2, vocab.len());
    if let Some(c) = cache {
        let mut w = BufWriter::new(File::create(c).with_context(|| format!("cannot create {}", c.display()))?);
        table.save(&mut w)?;
        w.flush()?;
    }
    Ok(Some(table))
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    out: Out,
    train_path: &Path,
    dev_path: Option<&Path>,
    lexicon: Option<&Path>,
    embeddings: Option<&Path>,
    cache: Option<&Path>,
    config: &ModelConfig,
    checkpoint: &Path,
) -> Result<()> {
    let train_docs = read_corpus(train_path)?;
    let dev_docs = match dev_path {
        Some(p) => read_corpus(p)?,
        None => Vec::new(),
    };
    let lexicon = match lexicon {
        Some(p) => load_medic(open(p)?).with_context(|| format!("{}", p.display()))?,
        None if config.flags.dictionary => bail!("v1_dictionary is on but no --lexicon file was given"),
        None => Lexicon::new(),
    };
    let all: Vec<Document> = train_docs.iter().chain(&dev_docs).cloned().collect();
    let table = word_table(config, &all, embeddings, cache)?;
    let outcome = train(config, &train_docs, &dev_docs, table, lexicon)?;
    for h in &outcome.history {
        writeln!(
            out,
            "epoch={} loss={:.6} learning_rate={:.6} dev_f1={:.6}",
            h.epoch + 1,
            h.loss,
            h.learning_rate,
            h.dev.f1
        )?;
    }
    let ckpt = &outcome.checkpoint;
    ckpt.save(checkpoint)
        .with_context(|| format!("cannot write {}", checkpoint.display()))?;
    writeln!(out, "best_epoch={} best_dev_f1={:.6}", ckpt.epoch + 1, ckpt.dev_f1)?;
    Ok(())
}

fn predict(out: Out, model: &Path, input: &Path, dest: Option<&Path>) -> Result<()> {
    let ckpt = Checkpoint::load(model).with_context(|| format!("{}", model.display()))?;
    let docs = read_corpus(input)?;
    let tagged = docs
        .iter()
        .map(|d| ckpt.model.annotate(d))
        .collect::<dner::Result<Vec<_>>>()?;
    match dest {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?);
            write_pubtator(&tagged, &mut w)?;
            w.flush()?;
        }
        None => write_pubtator(&tagged, out)?,
    }
    Ok(())
}

fn evaluate(out: Out, gold: &Path, pred: &Path, format: ReportFormat) -> Result<()> {
    let report = score_documents(&read_corpus(gold)?, &read_corpus(pred)?)?;
    if matches!(format, ReportFormat::Text | ReportFormat::Both) {
        write!(out, "{}", report.to_text())?;
    }
    if matches!(format, ReportFormat::Kv | ReportFormat::Both) {
        write!(out, "{}", report.to_key_values())?;
    }
    Ok(())
}

fn decode_fixture(out: Out, path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let fixture = CrfFixture::parse(&text).with_context(|| format!("{}", path.display()))?;
    writeln!(out, "{}", fixture.run()?)?;
    Ok(())
}

fn gradcheck_cmd(out: Out, seed: u64, tolerance: f64) -> Result<()> {
    let mut worst: f64 = 0.0;
    for report in gradcheck::run_all(seed)? {
        write!(out, "{report}")?;
        worst = worst.max(report.max_rel_error());
    }
    if worst >= tolerance {
        bail!("gradient check failed: max relative error {worst:.3e} >= {tolerance:e}");
    }
    Ok(())
}

fn run(out: Out, cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { corpus } => stats(out, &corpus),
        Command::ConvertSr { to, from, input } => convert_sr(out, to.into(), from.map(Into::into), input.as_deref()),
        Command::Train {
            train,
            dev,
            lexicon,
            embeddings,
            embedding_cache,
            config,
            overrides,
            seed,
            output,
        } => {
            let config = load_config(config.as_deref(), &overrides, seed)?;
            train_cmd(
                out,
                &train,
                dev.as_deref(),
                lexicon.as_deref(),
                embeddings.as_deref(),
                embedding_cache.as_deref(),
                &config,
                &output,
            )
        }
        Command::Predict { model, input, output } => predict(out, &model, &input, output.as_deref()),
        Command::Evaluate { gold, pred, format } => evaluate(out, &gold, &pred, format),
        Command::DecodeFixture { fixture } => decode_fixture(out, &fixture),
        Command::Gradcheck { seed, tolerance } => gradcheck_cmd(out, seed, tolerance),
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let mut out = BufWriter::new(io::stdout().lock());
    let result = run(&mut out, cli).and_then(|()| Ok(out.flush()?));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe downstream is not our failure
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
