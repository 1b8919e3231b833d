use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sfin_core::checkpoint::{load_checkpoint, save_checkpoint};
use sfin_core::config::parse_pairs;
use sfin_core::controller::{run_episode, SelectMode};
use sfin_core::corpus::{
    generate_corpus, read_corpus, synthetic_vocabulary, write_atomic, write_corpus,
    write_vocabulary, GenConfig,
};
use sfin_core::eval::evaluate;
use sfin_core::training::{metrics_csv, train, TrainConfig};

#[derive(Parser)]
#[command(name = "sfin", version, about = "Multi-scale event tagging")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled corpus.
    Gen(GenArgs),
    /// Train a model on a labelled corpus.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labelled corpus.
    Eval(EvalArgs),
    /// Tag a corpus and write the predictions as its tags.
    Tag(TagArgs),
    /// Export the step-by-step trace of one document.
    Trace(TraceArgs),
}

/// Declares a struct of optional `--key value` overrides, one per config key.
macro_rules! overrides {
    ($name:ident { $($field:ident),* $(,)? }) => {
        #[derive(Args, Default)]
        struct $name {
            $(
                #[arg(long, value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl $name {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

overrides!(GenKeys {
    vocab_size,
    paragraphs,
    sentences_per_paragraph,
    words_per_sentence,
    words_per_doc,
    events,
    trigger_pool,
    filler_pool,
    shape_weights,
});

overrides!(TrainKeys {
    supervised_epochs,
    rl_epochs,
    learning_rate,
    batch_size,
    beta,
    alpha,
    clip_norm,
    teacher_target,
    metrics_docs,
    vocab_size,
    embed_dim,
    word_hidden,
    sentence_hidden,
    controller_hidden,
    head_hidden,
    action_space,
});

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Key=value generator settings, applied before flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write a vocabulary file mapping ids to words.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    keys: GenKeys,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV to write (default: checkpoint path with `.metrics.csv`).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    keys: TrainKeys,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Sample,
}

impl From<Mode> for SelectMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Greedy => SelectMode::Greedy,
            Mode::Sample => SelectMode::Sample,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, value_enum, default_value = "text")]
    report: ReportFormat,
    /// Write the report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Index of the document in the corpus.
    #[arg(long, default_value_t = 0)]
    doc: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_pairs(&text).with_context(|| format!("config {}", path.display()))
}

fn gen(args: GenArgs) -> Result<()> {
    let mut cfg = GenConfig::default();
    if let Some(path) = &args.config {
        for (k, v) in read_pairs(path)? {
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in args.keys.pairs() {
        cfg.set(k, v)?;
    }
    if let Some(d) = args.docs {
        cfg.docs = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let docs = generate_corpus(&cfg)?;
    write_corpus(&args.out, &docs).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.vocab {
        write_vocabulary(path, &synthetic_vocabulary(&cfg))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} documents to {}", docs.len(), args.out.display());
    Ok(())
}

fn load_corpus(path: &Path) -> Result<Vec<sfin_core::corpus::Document>> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_model(path: &Path) -> Result<sfin_core::Model> {
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        for (k, v) in read_pairs(path)? {
            cfg.set(&k, &v)?;
        }
    }
    for (k, v) in args.keys.pairs() {
        cfg.set(k, v)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let corpus = load_corpus(&args.corpus)?;
    let outcome = train(&corpus, &cfg)?;
    let metrics = args.metrics.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".metrics.csv");
        PathBuf::from(p)
    });
    save_checkpoint(&outcome.model, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    write_atomic(&metrics, metrics_csv(&outcome.log).as_bytes())
        .with_context(|| format!("writing {}", metrics.display()))?;
    eprintln!(
        "trained {} epochs on {} documents; checkpoint {}, metrics {}",
        outcome.log.len(),
        corpus.len(),
        args.out.display(),
        metrics.display()
    );
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let model = load_model(&args.ckpt)?;
    let report = evaluate(&corpus, &model)?;
    let text = match args.report {
        ReportFormat::Text => format!("{report}\n"),
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn tag_cmd(args: TagArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let model = load_model(&args.ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let tagged = corpus
        .iter()
        .map(|doc| {
            let trace = run_episode(&model, doc, args.mode.into(), &mut rng)?;
            doc.with_gold(Some(trace.tags))
        })
        .collect::<sfin_core::Result<Vec<_>>>()?;
    write_corpus(&args.out, &tagged).with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "tagged {} documents into {}",
        tagged.len(),
        args.out.display()
    );
    Ok(())
}

fn trace_cmd(args: TraceArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let Some(doc) = corpus.get(args.doc) else {
        bail!(
            "document {} out of range (corpus has {})",
            args.doc,
            corpus.len()
        );
    };
    let model = load_model(&args.ckpt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let trace = run_episode(&model, doc, args.mode.into(), &mut rng)?;
    write_atomic(&args.out, trace.to_jsonl().as_bytes())
        .with_context(|| format!("writing {}", args.out.display()))?;
    eprintln!(
        "{} actions over {} words into {}",
        trace.num_actions(),
        doc.num_words(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Tag(a) => tag_cmd(a),
        Command::Trace(a) => trace_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
