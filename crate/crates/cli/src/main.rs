//! Command-line front end: train, evaluate, inspect, convert, sweep.

mod config;

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use bitembed::corpus::Vocabulary;
use bitembed::eval::{self, AnalogyDataset, AnalogyMethod, EvalResult, SimilarityDataset};
use bitembed::quantize::{Bitlevel, QuantizationScheme};
use bitembed::trainer::{self, ProgressEvent, SweepGrid, TrainingConfig};
use bitembed::vectors::WordVectors;

use config::{ConfigFile, RunConfig, VectorFormat};

/// Marker for operator mistakes (bad flags, missing inputs): exit code 1
/// instead of the runtime-failure code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "bitembed",
    version,
    about = "Train and evaluate 1/2-bit quantized word embeddings",
    long_about = "Learns word vectors with the CBOW negative-sampling objective, optionally \
                  through a 1- or 2-bit quantizer with straight-through gradients, and scores \
                  them on word-similarity and word-analogy benchmarks."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train word vectors on a text corpus
    Train(TrainArgs),
    /// Score vectors on a word-similarity dataset (Spearman correlation)
    EvalSim(EvalSimArgs),
    /// Score vectors on a word-analogy dataset (argmax accuracy)
    EvalAnalogy(EvalAnalogyArgs),
    /// List the closest and furthest words by dot product
    Neighbors(NeighborsArgs),
    /// Train a grid of configurations and emit a CSV of end losses
    Sweep(SweepArgs),
    /// Convert vectors between the text and packed formats
    Convert(ConvertArgs),
    /// Build and dump the corpus vocabulary
    Vocab(VocabArgs),
}

fn parse_bitlevel(s: &str) -> Result<Bitlevel, String> {
    s.parse::<Bitlevel>().map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> Result<VectorFormat, String> {
    VectorFormat::parse(s).map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    /// Training corpus: UTF-8 text, one sentence per line
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Where to write the trained vectors
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format [default: packed for 1/2-bit, text for 32-bit]
    #[arg(long, value_parser = parse_format)]
    format: Option<VectorFormat>,
    /// Load defaults from a config file written by --dump-config
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the fully resolved configuration to this path before training
    #[arg(long)]
    dump_config: Option<PathBuf>,
    /// Resolve and validate the configuration, then exit without training
    #[arg(long)]
    dry_run: bool,
    /// Vector dimension [default: 800]
    #[arg(long)]
    dim: Option<usize>,
    /// Maximum window radius [default: 10]
    #[arg(long)]
    window: Option<usize>,
    /// Negative samples per window [default: 12]
    #[arg(long)]
    negatives: Option<usize>,
    /// Training epochs [default: 25]
    #[arg(long)]
    epochs: Option<usize>,
    /// Starting learning rate, decayed linearly [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// Final learning rate [default: 0.0001]
    #[arg(long)]
    lr_end: Option<f64>,
    /// Frequent-word subsampling threshold, 0 disables [default: 1e-4]
    #[arg(long)]
    subsample: Option<f64>,
    /// Drop words occurring fewer times than this [default: 5]
    #[arg(long)]
    min_count: Option<u64>,
    /// Bits per parameter: 1, 2, or 32 [default: 1]
    #[arg(long, value_parser = parse_bitlevel)]
    bitlevel: Option<Bitlevel>,
    /// Negative-sampling distribution exponent [default: 0.75]
    #[arg(long)]
    alpha: Option<f64>,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    workers: Option<usize>,
    /// RNG seed; workers=1 runs with the same seed are bit-identical
    /// [default: 1]
    #[arg(long)]
    seed: Option<u64>,
    /// Always use the full window radius instead of a random reduced one
    #[arg(long)]
    fixed_window: bool,
    /// Sum quantized context vectors instead of averaging them
    #[arg(long)]
    no_context_average: bool,
    /// Stream per-interval loss and learning rate to stderr
    #[arg(long)]
    progress: bool,
    /// Track and report the running max |parameter| (divergence diagnostic)
    #[arg(long)]
    max_abs: bool,
    /// Also dump the vocabulary (word TAB count) to this path
    #[arg(long)]
    save_vocab: Option<PathBuf>,
}

#[derive(Args)]
struct EvalSimArgs {
    /// Vectors file (text or packed, auto-detected)
    #[arg(long)]
    vectors: PathBuf,
    /// Dataset: `word1 word2 score` per line
    #[arg(long)]
    dataset: PathBuf,
    /// Label for the output row [default: dataset file stem]
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct EvalAnalogyArgs {
    /// Vectors file (text or packed, auto-detected)
    #[arg(long)]
    vectors: PathBuf,
    /// Dataset: four words per line, `:` headers allowed
    #[arg(long)]
    dataset: PathBuf,
    /// Candidate scoring: add or mul [default: add]
    #[arg(long, default_value = "add")]
    method: String,
    /// Label for the output row [default: dataset file stem]
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct NeighborsArgs {
    /// Vectors file (text or packed, auto-detected)
    #[arg(long)]
    vectors: PathBuf,
    /// Target word
    #[arg(long)]
    word: String,
    /// How many neighbors per direction [default: 10]
    #[arg(long, default_value_t = 10)]
    count: usize,
}

#[derive(Args)]
struct SweepArgs {
    /// Training corpus
    #[arg(long)]
    corpus: PathBuf,
    /// CSV output path
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated bit levels, e.g. 1,32
    #[arg(long, default_value = "1,32")]
    bitlevels: String,
    /// Comma-separated dimensions, e.g. 100,200,400
    #[arg(long, default_value = "100")]
    dims: String,
    /// Comma-separated epoch counts, e.g. 1,10,25
    #[arg(long, default_value = "1")]
    epochs: String,
    /// Analogy dataset for the accuracy columns (omitted: empty columns)
    #[arg(long)]
    analogy: Option<PathBuf>,
    /// Maximum window radius [default: 10]
    #[arg(long)]
    window: Option<usize>,
    /// Negative samples per window [default: 12]
    #[arg(long)]
    negatives: Option<usize>,
    /// Starting learning rate [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// Final learning rate [default: 0.0001]
    #[arg(long)]
    lr_end: Option<f64>,
    /// Subsampling threshold [default: 1e-4]
    #[arg(long)]
    subsample: Option<f64>,
    /// Min word count [default: 5]
    #[arg(long)]
    min_count: Option<u64>,
    /// Sampling exponent [default: 0.75]
    #[arg(long)]
    alpha: Option<f64>,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    workers: Option<usize>,
    /// RNG seed [default: 1]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Input vectors (text or packed, auto-detected)
    #[arg(long)]
    input: PathBuf,
    /// Output path
    #[arg(long)]
    output: PathBuf,
    /// Target format [default: the opposite of the input format]
    #[arg(long, value_parser = parse_format)]
    to: Option<VectorFormat>,
    /// Bit level for text-to-packed conversion of already-quantized values
    #[arg(long, value_parser = parse_bitlevel)]
    bitlevel: Option<Bitlevel>,
    /// Apply the 1-bit quantizer to full-precision input (thresholded
    /// baseline)
    #[arg(long)]
    threshold_t1: bool,
}

#[derive(Args)]
struct VocabArgs {
    /// Corpus to count
    #[arg(long)]
    corpus: PathBuf,
    /// Drop words occurring fewer times than this [default: 5]
    #[arg(long, default_value_t = 5)]
    min_count: u64,
    /// Write to this path instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::EvalSim(args) => cmd_eval_sim(args),
        Command::EvalAnalogy(args) => cmd_eval_analogy(args),
        Command::Neighbors(args) => cmd_neighbors(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Convert(args) => cmd_convert(args),
        Command::Vocab(args) => cmd_vocab(args),
    }
}

fn resolve_train(args: &TrainArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => ConfigFile::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => ConfigFile::default(),
    };
    let from_file = |key: &str| file.get(key).map(PathBuf::from);
    let parsed = |key: &str| -> Result<Option<f64>> {
        file.get_parsed(key).map_err(|e| usage(e.to_string()))
    };

    let corpus = args
        .corpus
        .clone()
        .or_else(|| from_file("corpus"))
        .ok_or_else(|| usage("--corpus is required (flag or config file)"))?;
    let out = args
        .out
        .clone()
        .or_else(|| from_file("out"))
        .ok_or_else(|| usage("--out is required (flag or config file)"))?;

    let bitlevel = match (args.bitlevel, file.get("bitlevel")) {
        (Some(b), _) => b,
        (None, Some(raw)) => raw.parse().map_err(|e| usage(format!("{e}")))?,
        (None, None) => Bitlevel::B1,
    };
    let format = match (args.format, file.get("format")) {
        (Some(f), _) => f,
        (None, Some(raw)) => VectorFormat::parse(raw).map_err(|e| usage(format!("{e:#}")))?,
        (None, None) => {
            if bitlevel.is_quantized() {
                VectorFormat::Packed
            } else {
                VectorFormat::Text
            }
        }
    };
    let flag = |cli: bool, key: &str| -> Result<bool> {
        Ok(cli
            || file
                .get_parsed::<bool>(key)
                .map_err(|e| usage(e.to_string()))?
                .unwrap_or(false))
    };

    let config = RunConfig {
        corpus,
        out,
        format,
        bitlevel,
        dim: args
            .dim
            .or(file.get_parsed("dim").map_err(|e| usage(e.to_string()))?)
            .unwrap_or(800),
        window: args
            .window
            .or(file.get_parsed("window").map_err(|e| usage(e.to_string()))?)
            .unwrap_or(10),
        negatives: args
            .negatives
            .or(file
                .get_parsed("negatives")
                .map_err(|e| usage(e.to_string()))?)
            .unwrap_or(12),
        epochs: args
            .epochs
            .or(file.get_parsed("epochs").map_err(|e| usage(e.to_string()))?)
            .unwrap_or(25),
        lr: args.lr.or(parsed("lr")?).unwrap_or(0.05),
        lr_end: args.lr_end.or(parsed("lr_end")?).unwrap_or(0.0001),
        subsample: args.subsample.or(parsed("subsample")?).unwrap_or(1e-4),
        min_count: args
            .min_count
            .or(file
                .get_parsed("min_count")
                .map_err(|e| usage(e.to_string()))?)
            .unwrap_or(5),
        alpha: args.alpha.or(parsed("alpha")?).unwrap_or(0.75),
        workers: args
            .workers
            .or(file.get_parsed("workers").map_err(|e| usage(e.to_string()))?)
            .unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            }),
        seed: args
            .seed
            .or(file.get_parsed("seed").map_err(|e| usage(e.to_string()))?)
            .unwrap_or(1),
        fixed_window: flag(args.fixed_window, "fixed_window")?,
        no_context_average: flag(args.no_context_average, "no_context_average")?,
        progress: flag(args.progress, "progress")?,
        max_abs: flag(args.max_abs, "max_abs")?,
        save_vocab: args.save_vocab.clone().or_else(|| from_file("save_vocab")),
    };
    if config.format == VectorFormat::Packed && !config.bitlevel.is_quantized() {
        return Err(usage(
            "the packed format stores 1- or 2-bit vectors; use --format text for 32-bit",
        ));
    }
    config
        .training_config()
        .validate()
        .map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let run = resolve_train(&args)?;
    if let Some(path) = &args.dump_config {
        std::fs::write(path, run.dump())
            .with_context(|| format!("cannot write config dump {}", path.display()))?;
    }
    if args.dry_run {
        println!("configuration ok (dry run, nothing trained)");
        return Ok(());
    }

    let config = run.training_config();
    let print_progress = |e: ProgressEvent| {
        eprintln!(
            "[{:3}%] lr {:.6}  loss {:.4}  {:.0}k words/s",
            e.interval + 1,
            e.lr,
            e.mean_loss,
            e.words_per_sec / 1000.0
        );
    };
    let progress: Option<&(dyn Fn(ProgressEvent) + Sync)> = if run.progress {
        Some(&print_progress)
    } else {
        None
    };

    let vocab = Vocabulary::from_reader(
        File::open(&run.corpus)
            .with_context(|| format!("cannot open corpus {}", run.corpus.display()))?,
        config.min_count,
    )?;
    let vocab = std::sync::Arc::new(vocab);
    let trained = trainer::train_with_vocab(&run.corpus, vocab, &config, progress)?;

    if let Some(path) = &run.save_vocab {
        let mut out = File::create(path)
            .with_context(|| format!("cannot create vocab dump {}", path.display()))?;
        trained.vocab.dump(&mut out)?;
    }

    let scheme = config.scheme();
    let vectors = WordVectors::finalize(&trained.embeddings, &trained.vocab, &scheme)?;
    match run.format {
        VectorFormat::Packed => vectors.save_packed(&run.out)?,
        VectorFormat::Text => vectors.save_text(&run.out)?,
    }

    let report = &trained.report;
    print!(
        "trained {} words, dim {}, bitlevel {} in {:.1}s; processed {} tokens",
        vectors.len(),
        vectors.dim(),
        run.bitlevel.bits(),
        report.wall_secs,
        report.words_processed,
    );
    if let Some(loss) = report.end_loss() {
        print!("; end loss {loss:.4}");
    }
    if let Some(max_abs) = report.max_abs {
        print!("; max |parameter| {max_abs:.3e}");
    }
    println!("; saved {}", run.out.display());
    Ok(())
}

/// Load a vectors file, sniffing the packed magic.
fn load_vectors(path: &Path) -> Result<WordVectors> {
    let mut head = Vec::with_capacity(4);
    File::open(path)
        .with_context(|| format!("cannot open vectors file {}", path.display()))?
        .take(4)
        .read_to_end(&mut head)?;
    let vecs = if head == b"W2BQ" {
        WordVectors::load_packed(path)?
    } else {
        WordVectors::load_text(path)?
    };
    Ok(vecs)
}

fn dataset_label(name: &Option<String>, path: &Path) -> String {
    name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string())
    })
}

fn print_result(label: &str, result: &EvalResult) {
    println!(
        "{label}\t{:.4}\t{}\t{}",
        result.score, result.evaluated, result.skipped_oov
    );
}

fn cmd_eval_sim(args: EvalSimArgs) -> Result<()> {
    let vectors = load_vectors(&args.vectors)?;
    let dataset = SimilarityDataset::load(&args.dataset)?;
    let result = eval::eval_similarity(&vectors, &dataset)?;
    print_result(&dataset_label(&args.name, &args.dataset), &result);
    Ok(())
}

fn cmd_eval_analogy(args: EvalAnalogyArgs) -> Result<()> {
    let method: AnalogyMethod = args.method.parse().map_err(|e| usage(format!("{e}")))?;
    let vectors = load_vectors(&args.vectors)?;
    let dataset = AnalogyDataset::load(&args.dataset)?;
    let result = eval::eval_analogy(&vectors, &dataset, method)?;
    print_result(&dataset_label(&args.name, &args.dataset), &result);
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    let vectors = load_vectors(&args.vectors)?;
    let neighbors = eval::neighbors(&vectors, &args.word, args.count)?;
    println!("closest to {}:", args.word);
    for (word, score) in &neighbors.closest {
        println!("{word}\t{score:.4}");
    }
    println!("furthest from {}:", args.word);
    for (word, score) in &neighbors.furthest {
        println!("{word}\t{score:.4}");
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|_| usage(format!("bad {what} value {s:?}")))
        })
        .collect()
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let bitlevels: Vec<Bitlevel> = parse_list(&args.bitlevels, "bitlevel")?;
    let dims: Vec<usize> = parse_list(&args.dims, "dimension")?;
    let epochs: Vec<usize> = parse_list(&args.epochs, "epoch")?;
    if bitlevels.is_empty() || dims.is_empty() || epochs.is_empty() {
        return Err(usage("sweep grids must be non-empty"));
    }
    let analogy = args.analogy.as_deref().map(AnalogyDataset::load).transpose()?;

    let base = TrainingConfig {
        window: args.window.unwrap_or(10),
        negatives: args.negatives.unwrap_or(12),
        lr_start: args.lr.unwrap_or(0.05),
        lr_end: args.lr_end.unwrap_or(0.0001),
        subsample: args.subsample.unwrap_or(1e-4),
        min_count: args.min_count.unwrap_or(5),
        alpha: args.alpha.unwrap_or(0.75),
        workers: args.workers.unwrap_or(0),
        seed: args.seed.unwrap_or(1),
        ..TrainingConfig::default()
    };
    base.validate().map_err(|e| usage(e.to_string()))?;

    let grid = SweepGrid {
        bitlevels,
        dims,
        epochs,
    };
    let out = File::create(&args.out)
        .with_context(|| format!("cannot create CSV {}", args.out.display()))?;
    trainer::sweep(&args.corpus, &base, &grid, analogy.as_ref(), out)?;
    println!("sweep written to {}", args.out.display());
    Ok(())
}

/// Snap full-precision values onto the codebook of the given scheme,
/// tolerating decimal-printing jitter up to 1e-6.
fn snap_to_codebook(vectors: &WordVectors, bitlevel: Bitlevel) -> Result<WordVectors> {
    let scheme = QuantizationScheme::new(bitlevel);
    let dim = vectors.dim();
    let mut matrix = Vec::with_capacity(vectors.matrix().len());
    for (i, &x) in vectors.matrix().iter().enumerate() {
        let snapped = scheme
            .codebook()
            .iter()
            .copied()
            .find(|c| (x - c).abs() <= 1e-6)
            .ok_or_else(|| {
                anyhow!(
                    "value {x} at row {}, column {} is not a {}-bit codebook value; \
                     use --threshold-t1 to quantize full-precision vectors",
                    i / dim,
                    i % dim,
                    bitlevel.bits()
                )
            })?;
        matrix.push(snapped);
    }
    Ok(WordVectors::new(
        vectors.lexicon().clone(),
        matrix,
        dim,
        bitlevel,
    )?)
}

fn cmd_convert(args: ConvertArgs) -> Result<()> {
    let mut vectors = load_vectors(&args.input)?;
    let input_packed = vectors.bitlevel().is_quantized();

    if args.threshold_t1 {
        vectors = vectors.threshold_t1()?;
    }
    let target = args.to.unwrap_or(if input_packed {
        VectorFormat::Text
    } else {
        VectorFormat::Packed
    });

    match target {
        VectorFormat::Text => vectors.save_text(&args.output)?,
        VectorFormat::Packed => {
            if !vectors.bitlevel().is_quantized() {
                let bitlevel = args.bitlevel.ok_or_else(|| {
                    usage("text-to-packed conversion needs --bitlevel 1 or 2 (or --threshold-t1)")
                })?;
                if !bitlevel.is_quantized() {
                    return Err(usage("--bitlevel must be 1 or 2 for packed output"));
                }
                vectors = snap_to_codebook(&vectors, bitlevel)?;
            }
            vectors.save_packed(&args.output)?;
        }
    }
    println!(
        "converted {} words to {} ({})",
        vectors.len(),
        args.output.display(),
        match target {
            VectorFormat::Packed => format!("packed, {}-bit", vectors.bitlevel().bits()),
            VectorFormat::Text => "text".to_string(),
        }
    );
    Ok(())
}

fn cmd_vocab(args: VocabArgs) -> Result<()> {
    let vocab = Vocabulary::from_reader(
        File::open(&args.corpus)
            .with_context(|| format!("cannot open corpus {}", args.corpus.display()))?,
        args.min_count,
    )?;
    match &args.out {
        Some(path) => {
            let mut out = File::create(path)
                .with_context(|| format!("cannot create {}", path.display()))?;
            vocab.dump(&mut out)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            vocab.dump(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}
