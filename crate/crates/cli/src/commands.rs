use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use shardgrad::data_io::synth::{synthetic_corpus, write_synthetic_mnist};
use shardgrad::data_io::{idx_paths, load_corpus, load_idx, CharCorpus, ImageDataset};
use shardgrad::data_parallel::{LocalEngine, MpReplica, SequenceEngine};
use shardgrad::network::{sample_sequence, SampleMode};
use shardgrad::regret_lab::{
    bounds, run_delayed_sgd, BoundParams, ConvexProblem, DEFAULT_CENTER_RADIUS, DEFAULT_LR_SCALE,
};
use shardgrad::train::{
    accuracy, elapsed_ms, hybrid_engines, sequence_accuracy, train_epoch_local, train_epoch_mp,
    train_epoch_replicas, train_epoch_sequences, EpochRecord, Example,
};
use shardgrad::verify::{results_csv, standard_suite, Faults};
use shardgrad::{
    cost_breakdown, init_params, Activation, CostParams, Driver, Error, ExchangeMode, LossKind, MessageStats,
    MpConfig, MpEngine, NetworkSpec, Optimizer, ParameterServer, Parameters, ReplicaConfig, Rng,
};

use crate::config::{NetKind, ParallelMode, RunConfig, Settings, UsageError};

#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    Engine(Error),
    Io(io::Error),
    /// Checks ran but some failed.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        if self.is_usage() {
            2
        } else {
            1
        }
    }

    pub fn is_usage(&self) -> bool {
        match self {
            CliError::Usage(_) => true,
            CliError::Engine(e) => matches!(
                e,
                Error::Config(_) | Error::Partition(_) | Error::Topology(_) | Error::Range(_) | Error::BoundUndefined(_)
            ),
            CliError::Io(_) | CliError::Failed(_) => false,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{e}"),
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
            CliError::Failed(msg) => f.write_str(msg),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(UsageError(msg.into()))
}

fn open_out(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_csv(out: Option<&Path>, header: &str, rows: &[String]) -> Result<()> {
    let mut w = open_out(out)?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn train(s: &Settings) -> Result<()> {
    let cfg = RunConfig::from_settings(s)?;
    let exchange = match s.raw("exchange") {
        None => None,
        Some("hypercube") => Some(ExchangeMode::Hypercube),
        Some("relay") => Some(ExchangeMode::MasterRelay),
        Some(other) => return Err(usage(format!("invalid exchange {other:?}: expected hypercube or relay"))),
    };
    let records = if cfg.net.recurrent() {
        train_recurrent(&cfg)?
    } else {
        train_feedforward(&cfg, exchange)?
    };
    let rows: Vec<String> = records.iter().map(EpochRecord::csv_row).collect();
    write_csv(cfg.out.as_deref(), EpochRecord::CSV_HEADER, &rows)
}

fn split_holdout(all: ImageDataset, fraction: f64) -> Result<(ImageDataset, ImageDataset)> {
    let n_test = ((all.len() as f64 * fraction).round() as usize).max(1);
    if n_test >= all.len() {
        return Err(usage(format!("{} images are too few to hold out a test split", all.len())));
    }
    let n_train = all.len() - n_test;
    let test = ImageDataset {
        images: all.images[n_train..].to_vec(),
        labels: all.labels[n_train..].to_vec(),
        rows: all.rows,
        cols: all.cols,
    };
    Ok((all.take(n_train), test))
}

fn load_images(cfg: &RunConfig) -> Result<(ImageDataset, ImageDataset)> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| usage("image networks need --data (an IDX file or a directory)"))?;
    if data.is_dir() {
        let [ti, tl, vi, vl] = idx_paths(data);
        let train = load_idx(&ti, &tl)?;
        if vi.exists() && vl.exists() {
            let test = load_idx(&vi, &vl)?;
            if !test.is_empty() {
                return Ok((train, test));
            }
        }
        return split_holdout(train, cfg.holdout);
    }
    let labels = cfg
        .labels
        .as_ref()
        .ok_or_else(|| usage("--data names an image file, so --labels is required"))?;
    split_holdout(load_idx(data, labels)?, cfg.holdout)
}

fn feedforward_spec(cfg: &RunConfig, rows: usize, cols: usize) -> Result<NetworkSpec> {
    match cfg.net {
        NetKind::Cnn if (rows, cols) != (28, 28) => Err(usage(format!("the CNN expects 28x28 images, got {rows}x{cols}"))),
        NetKind::Cnn => Ok(NetworkSpec::mnist_cnn()),
        _ => {
            let mut sizes = vec![rows * cols];
            sizes.extend(&cfg.hidden);
            sizes.push(10);
            Ok(NetworkSpec::dense(&sizes, Activation::Sigmoid, Activation::Softmax)?)
        }
    }
}

fn replica_config(cfg: &RunConfig, epoch: usize) -> ReplicaConfig {
    let mut rc = ReplicaConfig::new(cfg.replicas, cfg.optimizer.batch_size);
    rc.n_fetch = cfg.n_fetch;
    rc.n_push = cfg.n_push;
    rc.shuffle_seed = Some(cfg.seed.wrapping_add(epoch as u64));
    rc.driver = Driver::Threaded {
        schedule_seed: cfg.deterministic.then_some(cfg.seed.wrapping_add(epoch as u64)),
    };
    rc
}

fn mp_config(cfg: &RunConfig, exchange: Option<ExchangeMode>) -> MpConfig {
    let mode = exchange.unwrap_or(if cfg.workers.is_power_of_two() {
        ExchangeMode::Hypercube
    } else {
        ExchangeMode::MasterRelay
    });
    let c = MpConfig::new(cfg.workers, mode);
    if cfg.deterministic {
        c.deterministic(cfg.seed)
    } else {
        c
    }
}

fn record(epoch: usize, train_loss: f64, test_accuracy: f64, start: Instant, cfg: &RunConfig, stats: MessageStats) -> EpochRecord {
    log::info!("epoch {epoch}: loss {train_loss:.4}, test accuracy {test_accuracy:.4}");
    EpochRecord {
        epoch,
        train_loss,
        test_accuracy,
        wall_ms: elapsed_ms(start, cfg.deterministic),
        messages: stats.message_count,
        data_units: stats.data_units,
    }
}

fn take_server(server: &Option<ParameterServer>) -> Parameters {
    server.as_ref().expect("server is returned after every epoch").parameters().clone()
}

fn train_feedforward(cfg: &RunConfig, exchange: Option<ExchangeMode>) -> Result<Vec<EpochRecord>> {
    let (train_set, test_set) = load_images(cfg)?;
    log::info!("{} training and {} test images", train_set.len(), test_set.len());
    let spec = feedforward_spec(cfg, train_set.rows, train_set.cols)?;
    let train: Vec<Example> = train_set.examples();
    let test: Vec<Example> = test_set.examples();
    let mut rng = Rng::new(cfg.seed);
    let init = init_params(&spec, &mut rng);
    let opt = &cfg.optimizer;
    let loss = LossKind::CrossEntropy;
    let mut out = Vec::with_capacity(cfg.epochs);

    match cfg.mode {
        ParallelMode::None => {
            let mut params = init;
            let mut optimizer = Optimizer::new(opt.kind);
            for epoch in 1..=cfg.epochs {
                let start = Instant::now();
                let l = train_epoch_local(&spec, &mut params, &mut optimizer, opt, &train, loss, &mut rng)?;
                let acc = accuracy(&spec, &params, &test)?;
                out.push(record(epoch, l, acc, start, cfg, MessageStats::default()));
            }
        }
        ParallelMode::Model => {
            let mut engine = MpEngine::new(&spec, &init, mp_config(cfg, exchange), opt.kind)?;
            for epoch in 1..=cfg.epochs {
                let start = Instant::now();
                let (l, stats) = train_epoch_mp(&mut engine, &train, opt.batch_size, opt.learning_rate, loss, &mut rng)?;
                let acc = accuracy(&spec, &engine.parameters()?, &test)?;
                out.push(record(epoch, l, acc, start, cfg, stats));
            }
            engine.shutdown()?;
        }
        ParallelMode::Data => {
            let mut server = Some(ParameterServer::new(init, opt.kind)?);
            for epoch in 1..=cfg.epochs {
                let start = Instant::now();
                let engines = vec![LocalEngine::new(&spec, loss); cfg.replicas];
                let (l, stats) = train_epoch_replicas(&replica_config(cfg, epoch), opt.learning_rate, &mut server, &train, engines)?;
                let acc = accuracy(&spec, &take_server(&server), &test)?;
                out.push(record(epoch, l, acc, start, cfg, stats));
            }
        }
        ParallelMode::Hybrid => {
            let mut groups: Vec<MpReplica> =
                hybrid_engines(&spec, &init, &mp_config(cfg, exchange), cfg.replicas, loss, opt.kind)?;
            let mut server = Some(ParameterServer::new(init, opt.kind)?);
            for epoch in 1..=cfg.epochs {
                let start = Instant::now();
                let engines: Vec<&mut MpReplica> = groups.iter_mut().collect();
                let (l, stats) = train_epoch_replicas(&replica_config(cfg, epoch), opt.learning_rate, &mut server, &train, engines)?;
                let stats = groups.iter().fold(stats, |acc, g| acc.plus(&g.engine().reset_stats()));
                let acc = accuracy(&spec, &take_server(&server), &test)?;
                out.push(record(epoch, l, acc, start, cfg, stats));
            }
            for g in groups {
                g.into_inner().shutdown()?;
            }
        }
    }
    Ok(out)
}

fn train_recurrent(cfg: &RunConfig) -> Result<Vec<EpochRecord>> {
    let path = cfg.corpus.as_ref().ok_or_else(|| usage("character models need --corpus"))?;
    let corpus = load_corpus(path)?;
    let len = corpus.stream().len();
    let cut = ((len as f64) * (1.0 - cfg.holdout)).round() as usize;
    if cut < 2 || len - cut < 2 {
        return Err(usage(format!("a corpus of {len} characters is too short to split")));
    }
    let spec = NetworkSpec::char_model(corpus.vocab_size(), &cfg.hidden, cfg.net == NetKind::Lstm)?;
    let mut rng = Rng::new(cfg.seed);
    let mut params = init_params(&spec, &mut rng);
    let test = corpus.sequences_in(cut..len, cfg.seq_len, None)?;
    let opt = &cfg.optimizer;
    let mut out = Vec::with_capacity(cfg.epochs);
    let mut server = match cfg.mode {
        ParallelMode::Data => Some(ParameterServer::new(params.clone(), opt.kind)?),
        _ => None,
    };
    let mut optimizer = Optimizer::new(opt.kind);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let seqs = corpus.sequences_in(0..cut, cfg.seq_len, Some(&mut rng))?;
        let (l, stats) = if server.is_some() {
            let engines = vec![SequenceEngine::new(&spec).with_truncation(cfg.truncation); cfg.replicas];
            let (per_seq, stats) =
                train_epoch_replicas(&replica_config(cfg, epoch), opt.learning_rate, &mut server, &seqs, engines)?;
            params = take_server(&server);
            (per_seq / cfg.seq_len as f64, stats)
        } else {
            let l = train_epoch_sequences(&spec, &mut params, &mut optimizer, opt, &seqs, cfg.truncation, &mut rng)?;
            (l, MessageStats::default())
        };
        let acc = sequence_accuracy(&spec, &params, &test)?;
        out.push(record(epoch, l, acc, start, cfg, stats));
    }
    if cfg.sample > 0 {
        eprintln!("{}", sample_text(&corpus, &spec, &params, cfg.sample, &mut rng)?);
    }
    Ok(out)
}

fn sample_text(corpus: &CharCorpus, spec: &NetworkSpec, params: &Parameters, n: usize, rng: &mut Rng) -> Result<String> {
    let codes = sample_sequence(spec, params, corpus.stream()[0], n, rng, SampleMode::Stochastic)?;
    Ok(corpus.decode(&codes)?)
}

pub fn cost(s: &Settings) -> Result<()> {
    let workers: Vec<usize> = s.list("workers")?.unwrap_or_else(|| vec![1, 2, 4, 8]);
    let sizes: Vec<usize> = s.list("sizes")?.unwrap_or_else(|| vec![784, 480, 160, 10]);
    let m = s.get_or("examples", 1usize)?;
    let (t_lat, t_data) = (s.get_or("t_lat", 0.0)?, s.get_or("t_data", 0.0)?);
    let mut rows = Vec::with_capacity(workers.len());
    for &f in &workers {
        let c = cost_breakdown(&CostParams::new(f, m, &sizes).with_timing(t_lat, t_data))?;
        if !c.exact_log {
            log::warn!("F = {f} is not a power of two; log2 F is fractional");
        }
        rows.push(format!(
            "{f},{},{},{},{},{},{},{}",
            c.k, c.n1, c.n2_paper, c.n2_measured_model, c.n3, c.n, c.t_comm
        ));
    }
    write_csv(
        s.path("out").as_deref(),
        "F,K,N1,N2_paper,N2_measured_model,N3,N,T_comm",
        &rows,
    )
}

pub fn regret(s: &Settings) -> Result<()> {
    let taus: Vec<usize> = s.list("taus")?.unwrap_or_else(|| vec![0, 1, 2, 5, 10]);
    let rounds = s.get_or("rounds", 10_000usize)?;
    let dim = s.get_or("dim", 10usize)?;
    let lambda = s.get_or("lambda", 1.0)?;
    let radius = s.get_or("radius", 2.0)?;
    let seed = s.seed()?;
    if let Some(&max) = taus.iter().max() {
        if rounds <= max {
            return Err(usage(format!("rounds ({rounds}) must exceed the largest delay ({max})")));
        }
    }
    let center = DEFAULT_CENTER_RADIUS.min(radius);
    let problem = ConvexProblem::generate(dim, lambda, radius, center, rounds, seed)?;
    let params = BoundParams::quadratic(lambda, radius, center, DEFAULT_LR_SCALE);
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let report = run_delayed_sgd(&problem, tau, DEFAULT_LR_SCALE, rounds)?;
        let b = bounds(&params, tau, rounds);
        let thm3 = b.thm3.map(|v| v.to_string()).unwrap_or_default();
        if report.regret > b.thm2 {
            log::warn!("tau {tau}: regret {} exceeds the high-probability bound {}", report.regret, b.thm2);
        }
        rows.push(format!("{tau},{rounds},{},{},{},{thm3}", report.regret, b.thm1, b.thm2));
    }
    write_csv(
        s.path("out").as_deref(),
        "tau,T,regret,bound_thm1,bound_thm2,bound_thm3",
        &rows,
    )
}

pub fn verify(s: &Settings) -> Result<()> {
    let faults = Faults {
        gradient_offset: s.get_or("perturb_gradient", 0.0)?,
    };
    let results = standard_suite(s.seed()?, faults)?;
    let mut stdout = io::stdout().lock();
    for r in &results {
        writeln!(stdout, "{r}")?;
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    writeln!(stdout, "{} of {} checks passed", results.len() - failed.len(), results.len())?;
    if let Some(path) = s.path("out") {
        std::fs::write(path, results_csv(&results))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed checks: {}", failed.join("; "))))
    }
}

fn required_out(s: &Settings, what: &str) -> Result<PathBuf> {
    s.path("out").ok_or_else(|| usage(format!("--out must name the {what}")))
}

pub fn gen_digits(s: &Settings) -> Result<()> {
    let dir = required_out(s, "output directory")?;
    let train = s.get_or("count", 10_000usize)?;
    let test = s.get_or("test_count", 2_000usize)?;
    write_synthetic_mnist(&dir, train, test, s.seed()?)?;
    log::info!("wrote {train} training and {test} test digits to {}", dir.display());
    Ok(())
}

pub fn gen_corpus(s: &Settings) -> Result<()> {
    let path = required_out(s, "output file")?;
    let bytes = s.get_or("bytes", 100_000usize)?;
    let text = synthetic_corpus(bytes, &mut Rng::new(s.seed()?));
    std::fs::write(&path, text)?;
    Ok(())
}
