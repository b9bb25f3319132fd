//! `sparselda`: train, evaluate and inspect sparsity-aware LDA models on
//! UCI bag-of-words corpora.
//!
//! Exit status is 0 on success, 1 on invalid input or configuration, and 2
//! when a file cannot be read or written. Every flag can also be set through
//! a `SPARSELDA_*` environment variable.

mod manifest;

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sparselda::eval::{format_topics, top_words};
use sparselda::synth::{generate_split, SynthConfig};
use sparselda::{
    heldout_ll, load_docword, load_uci, train, Checkpoint, ChunkCount, Corpus, EvalConfig, HeldoutSet, LineSink,
    TrainConfig,
};

use manifest::{digest_file, InputDigest, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "sparselda", version, about = "Sparsity-aware LDA trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoint, manifest and metrics log.
    Train(TrainArgs),
    /// Held-out per-token log-likelihood of a checkpoint.
    Eval(EvalArgs),
    /// Print the top words of every topic.
    Topics(TopicsArgs),
    /// Write a synthetic corpus in UCI format.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Replay the configuration and inputs recorded in a manifest.
    #[arg(long, env = "SPARSELDA_FROM_MANIFEST", conflicts_with_all = ["docword", "topics"])]
    from_manifest: Option<PathBuf>,
    #[arg(long, env = "SPARSELDA_DOCWORD", required_unless_present = "from_manifest")]
    docword: Option<PathBuf>,
    #[arg(long, env = "SPARSELDA_VOCAB")]
    vocab: Option<PathBuf>,
    #[arg(long, env = "SPARSELDA_TOPICS", required_unless_present = "from_manifest")]
    topics: Option<usize>,
    /// Defaults to 50 / topics.
    #[arg(long, env = "SPARSELDA_ALPHA")]
    alpha: Option<f64>,
    #[arg(long, env = "SPARSELDA_BETA", default_value_t = 0.01)]
    beta: f64,
    #[arg(long, env = "SPARSELDA_ITERS", default_value_t = 100)]
    iters: usize,
    /// `auto` or a number of chunks.
    #[arg(long, env = "SPARSELDA_CHUNKS", default_value = "auto", value_parser = parse_chunks)]
    chunks: ChunkCount,
    #[arg(long, env = "SPARSELDA_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Generated and recorded in the manifest when absent.
    #[arg(long, env = "SPARSELDA_SEED")]
    seed: Option<u64>,
    /// Held-out documents in UCI docword format, same vocabulary.
    #[arg(long, env = "SPARSELDA_HELDOUT")]
    heldout: Option<PathBuf>,
    /// Iterations between held-out evaluations (0: only after the last).
    #[arg(long, env = "SPARSELDA_EVAL_EVERY", default_value_t = 0)]
    eval_every: usize,
    #[arg(long, env = "SPARSELDA_BURN_IN", default_value_t = sparselda::eval::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[arg(long, env = "SPARSELDA_OUT", default_value = "sparselda-out")]
    out: PathBuf,
    /// Bytes of chunk data kept in memory; larger corpora are streamed from disk.
    #[arg(long, env = "SPARSELDA_MEM_BUDGET", default_value_t = sparselda::trainer::DEFAULT_MEMORY_BUDGET)]
    mem_budget: usize,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long, env = "SPARSELDA_MODEL")]
    model: PathBuf,
    #[arg(long, env = "SPARSELDA_HELDOUT")]
    heldout: PathBuf,
    #[arg(long, env = "SPARSELDA_BURN_IN", default_value_t = sparselda::eval::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Defaults to the seed stored in the checkpoint.
    #[arg(long, env = "SPARSELDA_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TopicsArgs {
    #[arg(long, env = "SPARSELDA_MODEL")]
    model: PathBuf,
    #[arg(long, env = "SPARSELDA_TOP_N", default_value_t = 10)]
    top_n: usize,
    /// Print words by name instead of id.
    #[arg(long, env = "SPARSELDA_VOCAB")]
    vocab: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 0)]
    heldout_docs: usize,
    #[arg(long, default_value_t = 5000)]
    vocab_size: usize,
    #[arg(long, default_value_t = 20)]
    topics: usize,
    #[arg(long, default_value_t = 64.0)]
    mean_len: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving docword.txt, vocab.txt and, with held-out
    /// documents, heldout.txt.
    #[arg(long)]
    out: PathBuf,
}

fn parse_chunks(s: &str) -> Result<ChunkCount, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(ChunkCount::Auto);
    }
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(ChunkCount::Fixed(n)),
        _ => Err(format!("expected `auto` or a positive integer, got `{s}`")),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn load_corpus(docword: &Path, vocab: Option<&Path>) -> Result<Corpus> {
    let corpus = match vocab {
        Some(v) => load_uci(open(docword)?, open(v)?),
        None => load_docword(open(docword)?),
    };
    corpus.with_context(|| format!("cannot load corpus {}", docword.display()))
}

fn load_heldout(path: &Path, vocab_size: usize) -> Result<HeldoutSet> {
    let corpus = load_docword(open(path)?).with_context(|| format!("cannot load held-out set {}", path.display()))?;
    if corpus.vocab_size() > vocab_size {
        bail!(sparselda::Error::Config(format!(
            "held-out vocabulary size {} exceeds the model's {vocab_size}",
            corpus.vocab_size()
        )));
    }
    Ok(HeldoutSet::from_corpus(&corpus))
}

fn fresh_seed() -> u64 {
    let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0);
    nanos ^ (std::process::id() as u64).rotate_left(32)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let manifest = match &args.from_manifest {
        Some(path) => {
            let m = RunManifest::read(path)?;
            m.verify_inputs()?;
            m
        }
        None => {
            let topics = args.topics.expect("required by clap");
            let docword = args.docword.clone().expect("required by clap");
            let mut cfg = TrainConfig::new(topics);
            if let Some(a) = args.alpha {
                cfg.alpha = a;
            }
            cfg.beta = args.beta;
            cfg.iterations = args.iters;
            cfg.num_chunks = args.chunks;
            cfg.num_workers = args.workers;
            cfg.seed = args.seed.unwrap_or_else(fresh_seed);
            cfg.memory_budget = args.mem_budget;
            cfg.eval_every = args.eval_every;
            cfg.burn_in = args.burn_in;
            let digest = |p: &Path| -> Result<InputDigest> {
                let path = fs::canonicalize(p).with_context(|| format!("cannot open {}", p.display()))?;
                Ok(InputDigest { sha256: digest_file(&path)?, path })
            };
            RunManifest::new(
                &cfg,
                digest(&docword)?,
                args.vocab.as_deref().map(digest).transpose()?,
                args.heldout.as_deref().map(digest).transpose()?,
            )
        }
    };
    let cfg = manifest.train_config();
    cfg.validate()?;

    let corpus = load_corpus(&manifest.inputs.docword.path, manifest.inputs.vocab.as_ref().map(|v| v.path.as_path()))?;
    let heldout = match &manifest.inputs.heldout {
        Some(h) => Some(load_heldout(&h.path, corpus.vocab_size())?),
        None => None,
    };
    // evaluate after the last iteration at least
    let cfg = TrainConfig {
        eval_every: if heldout.is_some() && cfg.eval_every == 0 { cfg.iterations } else { cfg.eval_every },
        ..cfg
    };

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    manifest.write(&args.out.join("manifest.json"))?;
    let log_path = args.out.join("metrics.log");
    let log = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .with_context(|| format!("cannot create {}", log_path.display()))?;
    let mut sink = LineSink(BufWriter::new(log));
    let model = train::<f32>(&corpus, &cfg, heldout.as_ref(), &mut sink)?;
    let ckpt_path = args.out.join("checkpoint.txt");
    model.checkpoint()?.save(&ckpt_path).with_context(|| format!("cannot write {}", ckpt_path.display()))?;
    eprintln!(
        "trained K={} on {} tokens for {} iterations (seed {}); outputs in {}",
        cfg.topics,
        corpus.num_tokens(),
        cfg.iterations,
        cfg.seed,
        args.out.display()
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let heldout = load_heldout(&args.heldout, ckpt.vocab_size)?;
    let prob = ckpt.probabilities::<f64>()?;
    let cfg = EvalConfig { burn_in: args.burn_in, seed: args.seed.unwrap_or(ckpt.seed) };
    let mut report = heldout_ll(&prob, ckpt.alpha, &heldout, &cfg)?;
    report.iteration = ckpt.iteration;
    println!("{}", report.to_line());
    Ok(())
}

fn cmd_topics(args: TopicsArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.model)?;
    let vocab: Vec<String> = match &args.vocab {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("cannot read {}", p.display()))?
            .lines()
            .map(str::to_string)
            .collect(),
        None => Vec::new(),
    };
    let prob = ckpt.probabilities::<f64>()?;
    let ranked = top_words(&prob, args.top_n)?;
    let mut out = io::stdout().lock();
    out.write_all(format_topics(&ranked, &vocab).as_bytes())?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg =
        SynthConfig { seed: args.seed, ..SynthConfig::new(args.docs, args.vocab_size, args.topics, args.mean_len) };
    let (train, heldout) = generate_split(&cfg, args.heldout_docs)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let write = |name: &str, corpus: &Corpus| -> Result<()> {
        let path = args.out.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("cannot create {}", path.display()))?);
        corpus.write_uci(&mut w)?;
        w.flush()?;
        Ok(())
    };
    write("docword.txt", &train)?;
    if args.heldout_docs > 0 {
        write("heldout.txt", &heldout)?;
    }
    let vocab: String = train.vocab().iter().map(|w| format!("{w}\n")).collect();
    fs::write(args.out.join("vocab.txt"), vocab)?;
    Ok(())
}

/// 2 for filesystem failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|e| {
        e.downcast_ref::<io::Error>().is_some() || e.downcast_ref::<sparselda::Error>().is_some_and(|e| e.is_io())
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Topics(a) => cmd_topics(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
