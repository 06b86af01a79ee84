//! `shardgrad`: training runs, cost-model sweeps, regret experiments and
//! the verification suite, all writing CSV.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::CliError;
use crate::config::Settings;

#[derive(Parser, Debug)]
#[command(name = "shardgrad", version, about = "Data- and model-parallel training with exact traffic accounting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network and write one CSV row per epoch.
    Train(TrainArgs),
    /// Evaluate the communication cost model over a sweep of worker counts.
    Cost(CostArgs),
    /// Run delayed SGD on random quadratics and compare regret with its bounds.
    Regret(RegretArgs),
    /// Run the self-check suite; exits 1 if any check fails.
    Verify(VerifyArgs),
    /// Write a synthetic handwritten-digit dataset in IDX format.
    GenDigits(GenDigitsArgs),
    /// Write a synthetic play-script text corpus.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed; falls back to SHARDGRAD_SEED, then 42.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// fc, cnn, rnn or lstm.
    #[arg(long)]
    net: Option<String>,
    /// none, data, model or hybrid.
    #[arg(long)]
    mode: Option<String>,
    /// Tasks per model-parallel group.
    #[arg(long)]
    workers: Option<usize>,
    /// Data-parallel replicas.
    #[arg(long)]
    replicas: Option<usize>,
    /// sgd, momentum or rmsprop.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// IDX image file, or a directory holding the usual train/test quartet.
    #[arg(long)]
    data: Option<PathBuf>,
    /// IDX label file matching --data.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// UTF-8 text for the character models.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Seeded scheduling and zeroed wall times, for byte-identical output.
    #[arg(long)]
    deterministic: bool,
    /// Comma-separated hidden layer sizes.
    #[arg(long)]
    hidden: Option<String>,
    /// hypercube or relay exchange for model parallelism.
    #[arg(long)]
    exchange: Option<String>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Characters to sample to standard error after training a character model.
    #[arg(long)]
    sample: Option<usize>,
}

#[derive(Args, Debug)]
struct CostArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated worker counts F.
    #[arg(long)]
    workers: Option<String>,
    /// Comma-separated layer sizes b_0..b_{n-1}.
    #[arg(long)]
    sizes: Option<String>,
    /// Examples per epoch M.
    #[arg(long)]
    examples: Option<usize>,
    /// Seconds per message.
    #[arg(long)]
    t_lat: Option<f64>,
    /// Seconds per data unit.
    #[arg(long)]
    t_data: Option<f64>,
}

#[derive(Args, Debug)]
struct RegretArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated delays.
    #[arg(long)]
    taus: Option<String>,
    /// Rounds T.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Test hook: offset added to one distributed gradient entry.
    #[arg(long, hide = true)]
    perturb_gradient: Option<f64>,
}

#[derive(Args, Debug)]
struct GenDigitsArgs {
    #[command(flatten)]
    common: Common,
    /// Training images.
    #[arg(long)]
    count: Option<usize>,
    /// Test images.
    #[arg(long)]
    test_count: Option<usize>,
}

#[derive(Args, Debug)]
struct GenCorpusArgs {
    #[command(flatten)]
    common: Common,
    /// Minimum size in bytes.
    #[arg(long)]
    bytes: Option<usize>,
}

fn put<T: ToString>(s: &mut Settings, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        s.set(key, v.to_string());
    }
}

impl Common {
    /// Config file entries overlaid with the flags given on the command line.
    fn settings(&self, flags: Settings) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let mut own = Settings::default();
        put(&mut own, "seed", &self.seed);
        put(&mut own, "out", &self.out.as_ref().map(|p| p.display().to_string()));
        s.overlay(own);
        s.overlay(flags);
        Ok(s)
    }
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => {
            let mut f = Settings::default();
            put(&mut f, "net", &a.net);
            put(&mut f, "mode", &a.mode);
            put(&mut f, "workers", &a.workers);
            put(&mut f, "replicas", &a.replicas);
            put(&mut f, "optimizer", &a.optimizer);
            put(&mut f, "lr", &a.lr);
            put(&mut f, "batch", &a.batch);
            put(&mut f, "epochs", &a.epochs);
            put(&mut f, "data", &path_string(&a.data));
            put(&mut f, "labels", &path_string(&a.labels));
            put(&mut f, "corpus", &path_string(&a.corpus));
            put(&mut f, "hidden", &a.hidden);
            put(&mut f, "exchange", &a.exchange);
            put(&mut f, "seq_len", &a.seq_len);
            put(&mut f, "sample", &a.sample);
            if a.deterministic {
                f.set("deterministic", "true");
            }
            commands::train(&a.common.settings(f)?)
        }
        Command::Cost(a) => {
            let mut f = Settings::default();
            put(&mut f, "workers", &a.workers);
            put(&mut f, "sizes", &a.sizes);
            put(&mut f, "examples", &a.examples);
            put(&mut f, "t_lat", &a.t_lat);
            put(&mut f, "t_data", &a.t_data);
            commands::cost(&a.common.settings(f)?)
        }
        Command::Regret(a) => {
            let mut f = Settings::default();
            put(&mut f, "taus", &a.taus);
            put(&mut f, "rounds", &a.rounds);
            put(&mut f, "dim", &a.dim);
            put(&mut f, "lambda", &a.lambda);
            put(&mut f, "radius", &a.radius);
            commands::regret(&a.common.settings(f)?)
        }
        Command::Verify(a) => {
            let mut f = Settings::default();
            put(&mut f, "perturb_gradient", &a.perturb_gradient);
            commands::verify(&a.common.settings(f)?)
        }
        Command::GenDigits(a) => {
            let mut f = Settings::default();
            put(&mut f, "count", &a.count);
            put(&mut f, "test_count", &a.test_count);
            commands::gen_digits(&a.common.settings(f)?)
        }
        Command::GenCorpus(a) => {
            let mut f = Settings::default();
            put(&mut f, "bytes", &a.bytes);
            commands::gen_corpus(&a.common.settings(f)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                eprintln!("\nFor usage, run: shardgrad <COMMAND> --help");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
