mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use config::{ConfigError, Settings};

/// Architecture search for CTC speech recognizers.
///
/// Settings come from an optional `--config` file of `key = value` lines in
/// `[sections]` (data, frontend, space, controller, train, optimizer,
/// search, decoder, lm), then `--set section.key=value` overrides, then the
/// dedicated flags of each command. The seed falls back to NAS_ASR_SEED.
/// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
#[derive(Debug, Parser)]
#[command(name = "nas-asr", version)]
struct Cli {
    /// Log format on stderr; `json` emits one JSON object per event.
    #[arg(long, value_enum, default_value_t = LogFormat::Text, global = true)]
    log: LogFormat,

    /// Configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `search.budget=8`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Global seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for search and decode (config key `workers`).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one MFCC feature cache file per manifest entry.
    Extract(ExtractArgs),
    /// Train a backoff n-gram model and write it in ARPA format.
    TrainLm(TrainLmArgs),
    /// Train one child architecture; writes a checkpoint and JSON metrics.
    TrainChild(TrainChildArgs),
    /// Run the controller-driven architecture search.
    Search(SearchArgs),
    /// Beam-decode a manifest with a trained checkpoint to JSON lines.
    Decode(DecodeArgs),
    /// Grid-search LM fusion weights on a dev manifest.
    Tune(TuneArgs),
    /// Score decoded transcripts against a reference manifest.
    Score(ScoreArgs),
    /// Generate the synthetic tone corpus (train/dev/test manifests).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Input manifest (JSON lines of id, audio, text).
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory for `<id>.feat` files.
    #[arg(long)]
    out: PathBuf,
    /// Add white Gaussian noise at this SNR (dB) before extraction; the
    /// noise for each utterance is seeded from the run seed and its id.
    #[arg(long, value_name = "DB")]
    noise_snr: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainLmArgs {
    /// Plain-text corpus, one sentence per line.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    text: Option<PathBuf>,
    /// Take sentences from the transcripts of this manifest instead.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// N-gram order (config key `lm.order`).
    #[arg(long)]
    order: Option<usize>,
    /// `witten-bell`, `add-one` or `none` (config key `lm.smoothing`).
    #[arg(long)]
    smoothing: Option<String>,
    /// Output ARPA file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Training manifest (config key `data.train`).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Dev manifest (config key `data.dev`).
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Feature cache directory; features are extracted from audio when
    /// unset (config key `data.features`).
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainChildArgs {
    /// Architecture, e.g. `f16,kh3,kw3,sh2,sw1,mp0,bn1,rnn0,h32`.
    #[arg(long)]
    arch: String,
    #[command(flatten)]
    data: DataArgs,
    /// Gradient step limit (config key `train.max_steps`).
    #[arg(long)]
    steps: Option<usize>,
    /// Adam step size (config key `optimizer.alpha`).
    #[arg(long)]
    lr: Option<f64>,
    /// Output directory for `model.nasm` and `metrics.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Test manifest; when set the selected child is also scored on it
    /// (config key `data.test`).
    #[arg(long)]
    test: Option<PathBuf>,
    /// Number of children (config key `search.budget`).
    #[arg(long)]
    budget: Option<usize>,
    /// Children per controller update (config key `search.batch_size`).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Output directory for `search.jsonl`, `best.nasm` and `best.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecoderArgs {
    /// Beam width; 1 reproduces greedy decoding (config key `decoder.beam_width`).
    #[arg(long)]
    beam: Option<usize>,
    /// LM weight (config key `decoder.alpha`).
    #[arg(long)]
    alpha: Option<f64>,
    /// Per-word bonus (config key `decoder.beta`).
    #[arg(long)]
    beta: Option<f64>,
    /// ARPA language model for shallow fusion (config key `decoder.lm`).
    #[arg(long)]
    lm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Trained child checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Manifest to decode.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    decoder: DecoderArgs,
    /// Hypotheses per utterance (config key `decoder.top_k`).
    #[arg(long)]
    top_k: Option<usize>,
    /// Feature cache directory (config key `data.features`).
    #[arg(long)]
    features: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dev manifest used to pick the weights.
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    decoder: DecoderArgs,
    /// Candidate LM weights.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
    alphas: Vec<f64>,
    /// Candidate word bonuses.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2")]
    betas: Vec<f64>,
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Decode output (JSON lines with `id` and `top`).
    #[arg(long)]
    hyp: PathBuf,
    /// Reference manifest.
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory; receives `train/`, `dev/` and `test/`.
    #[arg(long)]
    out: PathBuf,
    /// Alphabet size.
    #[arg(long, default_value_t = 8)]
    symbols: usize,
    #[arg(long, default_value_t = 400)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    dev: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    /// White-noise amplitude relative to the tones.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

fn init_logging(format: LogFormat) {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    match format {
        LogFormat::Text => builder.init(),
        LogFormat::Json => builder.json().init(),
    }
}

fn settings(cli: &Cli) -> anyhow::Result<Settings> {
    let mut s = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    for a in &cli.overrides {
        s.assign(a)?;
    }
    s.set_opt("seed", cli.seed);
    s.set_opt("workers", cli.workers);
    Ok(s)
}

fn set_path(s: &mut Settings, key: &str, path: &Option<PathBuf>) {
    s.set_opt(key, path.as_ref().map(|p| p.display()));
}

fn apply_data(s: &mut Settings, d: &DataArgs) {
    set_path(s, "data.train", &d.train);
    set_path(s, "data.dev", &d.dev);
    set_path(s, "data.features", &d.features);
}

fn apply_decoder(s: &mut Settings, d: &DecoderArgs) {
    s.set_opt("decoder.beam_width", d.beam);
    s.set_opt("decoder.alpha", d.alpha);
    s.set_opt("decoder.beta", d.beta);
    set_path(s, "decoder.lm", &d.lm);
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut s = settings(&cli)?;
    match &cli.command {
        Command::Extract(a) => commands::extract(&s.resolve()?, &a.manifest, &a.out, a.noise_snr),
        Command::TrainLm(a) => {
            s.set_opt("lm.order", a.order);
            s.set_opt("lm.smoothing", a.smoothing.as_ref());
            commands::train_lm(&s.resolve()?, a.text.as_deref(), a.manifest.as_deref(), &a.out)
        }
        Command::TrainChild(a) => {
            apply_data(&mut s, &a.data);
            s.set_opt("train.max_steps", a.steps);
            s.set_opt("optimizer.alpha", a.lr);
            commands::train_child(&s.resolve()?, &a.arch, &a.out)
        }
        Command::Search(a) => {
            apply_data(&mut s, &a.data);
            set_path(&mut s, "data.test", &a.test);
            s.set_opt("search.budget", a.budget);
            s.set_opt("search.batch_size", a.batch_size);
            commands::search(&s.resolve()?, &a.out)
        }
        Command::Decode(a) => {
            apply_decoder(&mut s, &a.decoder);
            s.set_opt("decoder.top_k", a.top_k);
            set_path(&mut s, "data.features", &a.features);
            commands::decode(&s.resolve()?, &a.checkpoint, &a.manifest, a.out.as_deref())
        }
        Command::Tune(a) => {
            apply_decoder(&mut s, &a.decoder);
            set_path(&mut s, "data.features", &a.features);
            commands::tune(&s.resolve()?, &a.checkpoint, &a.manifest, &a.alphas, &a.betas)
        }
        Command::Score(a) => commands::score(&a.hyp, &a.reference),
        Command::Synth(a) => {
            let cfg = s.resolve()?;
            commands::synth(&cfg, &a.out, a.symbols, [a.train, a.dev, a.test], a.noise)
        }
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
    init_logging(cli.log);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<ConfigError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
