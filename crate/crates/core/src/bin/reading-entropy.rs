use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use reading_entropy::corpus::{ingest_corpus, read_frequency_file, unigram_logprobs, CorpusFormat, SkipPolicy};
use reading_entropy::infotheory::word_infos;
use reading_entropy::lm::{
    ngram_distributions, read_fulldist, read_summary, tokenize_corpus, write_summary, NgramConfig, Prediction,
    SubwordPosition, Subwordizer,
};
use reading_entropy::pipeline::{self, PipelineConfig};
use reading_entropy::predictors::Experiment;
use reading_entropy::synth::{generate, GeneratorConfig};
use reading_entropy::{Alpha, Error, Result};

#[derive(Parser)]
#[command(
    name = "reading-entropy",
    version,
    about = "Surprisal and Renyi entropy as predictors of reading times"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a reading-measure TSV into one row per word.
    Ingest(IngestArgs),
    /// Compute word-level surprisal and entropies (a word-level SUMMARY file).
    Entropy(EntropyArgs),
    /// Run experiments from a JSON config.
    Run(RunArgs),
    /// Generate a synthetic corpus with known effects.
    Synth(SynthArgs),
    /// Tabulate Δllh against α for a JSON config.
    Sweep(RunArgs),
}

fn parse_format(s: &str) -> Result<CorpusFormat> {
    s.parse()
}

fn parse_policy(s: &str) -> Result<SkipPolicy> {
    s.parse()
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// eye-tracking or self-paced
    #[arg(long, value_parser = parse_format, default_value = "eye-tracking")]
    format: CorpusFormat,
    /// zero, exclude, or na (self-paced)
    #[arg(long, value_parser = parse_policy)]
    skip_policy: Option<SkipPolicy>,
    #[arg(long)]
    frequencies: Option<PathBuf>,
    /// Defaults to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EntropyArgs {
    #[arg(long, conflicts_with_all = ["summary", "corpus"])]
    fulldist: Option<PathBuf>,
    #[arg(long, conflicts_with = "corpus")]
    summary: Option<PathBuf>,
    /// Train the built-in n-gram model on this corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = parse_format, default_value = "eye-tracking")]
    format: CorpusFormat,
    #[arg(long, default_value_t = 2)]
    ngram_order: usize,
    /// Comma-separated Rényi orders; defaults to the standard grid.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<Alpha>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured experiment list (repeatable).
    #[arg(long)]
    experiment: Vec<Experiment>,
    /// Fold and permutation seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    permutations: Option<usize>,
    /// Comma-separated α grid replacing the configured one.
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<Alpha>,
    /// Skip policy for every eye-tracking dataset: zero or exclude.
    #[arg(long, value_parser = parse_policy)]
    skip_policy: Option<SkipPolicy>,
    /// Also emit the α-sweep table.
    #[arg(long)]
    alpha_sweep: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// GeneratorConfig JSON; a standard configuration is used without it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Approximate word count of the standard configuration.
    #[arg(long, default_value_t = 5000)]
    words: usize,
    #[arg(long)]
    output: PathBuf,
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, content).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn ingest(args: IngestArgs) -> Result<()> {
    let policy = args.skip_policy.unwrap_or(match args.format {
        CorpusFormat::EyeTracking => SkipPolicy::IncludeAsZero,
        CorpusFormat::SelfPaced => SkipPolicy::NotApplicable,
    });
    let mut corpus = ingest_corpus(&args.corpus, args.format, policy)?;
    let freq = args.frequencies.as_ref().map(read_frequency_file).transpose()?;
    let unigrams = unigram_logprobs(
        corpus.words().map(|w| w.surface.as_str()),
        freq.as_ref(),
        reading_entropy::corpus::DEFAULT_FREQUENCY_FLOOR,
    )?;
    corpus.assign_unigrams(&unigrams)?;
    write_output(args.output.as_deref(), &corpus.to_aggregates_tsv())
}

fn entropy(args: EntropyArgs) -> Result<()> {
    let alphas = if args.alpha.is_empty() {
        Alpha::default_grid()
    } else {
        args.alpha
    };
    let positions = if let Some(p) = &args.fulldist {
        read_fulldist(p)?.0
    } else if let Some(p) = &args.summary {
        read_summary(p)?.0
    } else if let Some(p) = &args.corpus {
        let policy = match args.format {
            CorpusFormat::EyeTracking => SkipPolicy::IncludeAsZero,
            CorpusFormat::SelfPaced => SkipPolicy::NotApplicable,
        };
        let corpus = ingest_corpus(p, args.format, policy)?;
        let (vocab, texts) = tokenize_corpus(&corpus, Subwordizer::Whitespace);
        let order = args.ngram_order;
        let config = NgramConfig::new(order, vec![1.0 / order as f64; order])?;
        ngram_distributions(&texts, &vocab, &config)?
    } else {
        return Err(Error::Config("give one of --fulldist, --summary or --corpus".into()));
    };
    let infos = word_infos(&positions, &alphas)?;
    let words: Vec<SubwordPosition> = infos
        .iter()
        .map(|(key, info)| SubwordPosition {
            text_id: key.text_id,
            word_index: key.word_index,
            subword_index: 0,
            realized_id: 0,
            prediction: Prediction::Summary {
                surprisal_bits: info.surprisal_bits,
                renyi_bits: info.entropy_bits.clone(),
            },
        })
        .collect();
    write_summary(&args.output, &words, &alphas)
}

fn load_run_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)?;
    if !args.experiment.is_empty() {
        config.experiments = args.experiment.clone();
    }
    if let Some(seed) = args.seed {
        config.settings.fold_seed = seed;
        config.settings.permutation_seed = seed;
    }
    if let Some(b) = args.permutations {
        config.settings.permutations = b;
    }
    if !args.alpha.is_empty() {
        config.alphas = args.alpha.clone();
    }
    if let Some(policy) = args.skip_policy {
        if policy == SkipPolicy::NotApplicable {
            return Err(Error::Config("--skip-policy takes zero or exclude".into()));
        }
        for d in &mut config.datasets {
            if d.format == CorpusFormat::EyeTracking {
                d.skip_policy = Some(policy);
            }
        }
    }
    if args.alpha_sweep {
        config.alpha_sweep = true;
    }
    if let Some(out) = &args.output {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn run(args: RunArgs, sweep_only: bool) -> Result<()> {
    let mut config = load_run_config(&args)?;
    if sweep_only {
        config.experiments.clear();
        config.alpha_sweep = true;
    }
    for path in pipeline::run(&config)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str::<GeneratorConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => GeneratorConfig::standard(0, args.words),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let paths = generate(&config)?.write(&args.output)?;
    let summary: BTreeMap<&str, String> = [
        ("corpus", paths.corpus.display().to_string()),
        ("fulldist", paths.fulldist.display().to_string()),
        ("frequencies", paths.frequencies.display().to_string()),
    ]
    .into_iter()
    .collect();
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Entropy(a) => entropy(a),
        Command::Run(a) => run(a, false),
        Command::Synth(a) => synth(a),
        Command::Sweep(a) => run(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
