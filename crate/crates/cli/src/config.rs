use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use shardgrad::{OptimizerConfig, OptimizerKind};

pub const SEED_ENV: &str = "SHARDGRAD_SEED";
pub const DEFAULT_SEED: u64 = 42;

/// A usage or configuration problem; reported with exit code 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Flat key/value settings. Keys use underscores; dashes are folded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("config line {}: expected key=value, got {raw:?}", no + 1)))?;
            if k.trim().is_empty() {
                return Err(usage(format!("config line {}: empty key", no + 1)));
            }
            map.insert(normalize(k), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(normalize(key), value.into());
    }

    /// Entries of `other` win.
    pub fn overlay(&mut self, other: Settings) {
        self.0.extend(other.0);
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, UsageError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| usage(format!("invalid {key} {v:?}: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, UsageError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, UsageError>
    where
        T::Err: fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse::<T>()
                            .map_err(|e| usage(format!("invalid {key} entry {item:?}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool, UsageError> {
        match self.raw(key) {
            None => Ok(false),
            Some("1" | "true" | "yes" | "on" | "") => Ok(true),
            Some("0" | "false" | "no" | "off") => Ok(false),
            Some(v) => Err(usage(format!("invalid {key} {v:?}: expected true or false"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    /// Flag or file seed, then the environment, then the default.
    pub fn seed(&self) -> Result<u64, UsageError> {
        if let Some(s) = self.get("seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|e| usage(format!("invalid {SEED_ENV} {v:?}: {e}"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Fc,
    Cnn,
    Rnn,
    Lstm,
}

impl FromStr for NetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fc" => Ok(Self::Fc),
            "cnn" => Ok(Self::Cnn),
            "rnn" => Ok(Self::Rnn),
            "lstm" => Ok(Self::Lstm),
            _ => Err("expected one of fc, cnn, rnn, lstm".into()),
        }
    }
}

impl NetKind {
    pub fn recurrent(self) -> bool {
        matches!(self, Self::Rnn | Self::Lstm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParallelMode {
    None,
    Data,
    Model,
    Hybrid,
}

impl FromStr for ParallelMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "data" => Ok(Self::Data),
            "model" => Ok(Self::Model),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err("expected one of none, data, model, hybrid".into()),
        }
    }
}

/// Everything a training run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub net: NetKind,
    pub mode: ParallelMode,
    pub workers: usize,
    pub replicas: usize,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub deterministic: bool,
    /// Hidden layer sizes.
    pub hidden: Vec<usize>,
    pub seq_len: usize,
    pub truncation: usize,
    /// Fraction of the data held out for testing when no test split is given.
    pub holdout: f64,
    pub n_fetch: usize,
    pub n_push: usize,
    /// Characters to sample after training a character model.
    pub sample: usize,
}

impl RunConfig {
    pub fn from_settings(s: &Settings) -> Result<Self, UsageError> {
        let net: NetKind = s.get("net")?.ok_or_else(|| usage("train needs --net (fc, cnn, rnn or lstm)"))?;
        let mode = s.get_or("mode", ParallelMode::None)?;
        let default_workers = if matches!(mode, ParallelMode::Model | ParallelMode::Hybrid) { 2 } else { 1 };
        let default_replicas = if matches!(mode, ParallelMode::Data | ParallelMode::Hybrid) { 2 } else { 1 };
        let (name, lr, batch) = if net.recurrent() {
            ("rmsprop", 0.003, 32)
        } else {
            ("momentum", 0.1, 16)
        };
        let lr = s.get_or("lr", lr)?;
        let momentum = s.get_or("momentum", 0.9)?;
        let mut optimizer = match s.raw("optimizer").unwrap_or(name) {
            "sgd" => OptimizerConfig::sgd(lr),
            "momentum" => OptimizerConfig::momentum(lr, momentum),
            "rmsprop" => OptimizerConfig::rmsprop(lr),
            other => return Err(usage(format!("invalid optimizer {other:?}: expected sgd, momentum or rmsprop"))),
        };
        optimizer.batch_size = s.get_or("batch", batch)?;
        optimizer.validate().map_err(|e| usage(e.to_string()))?;
        if let OptimizerKind::Momentum { .. } = optimizer.kind {
            if !(0.0..1.0).contains(&momentum) {
                return Err(usage("momentum must lie in [0, 1)"));
            }
        }
        let hidden = s.list("hidden")?.unwrap_or_else(|| match net {
            NetKind::Fc => vec![480, 160],
            _ => vec![64],
        });
        let seq_len = s.get_or("seq_len", 100)?;
        let cfg = Self {
            net,
            mode,
            workers: s.get_or("workers", default_workers)?,
            replicas: s.get_or("replicas", default_replicas)?,
            optimizer,
            epochs: s.get_or("epochs", 1)?,
            seed: s.seed()?,
            data: s.path("data"),
            labels: s.path("labels"),
            corpus: s.path("corpus"),
            out: s.path("out"),
            deterministic: s.flag("deterministic")?,
            hidden,
            seq_len,
            truncation: s.get_or("truncation", 25)?,
            holdout: s.get_or("holdout", 0.2)?,
            n_fetch: s.get_or("n_fetch", 1)?,
            n_push: s.get_or("n_push", 1)?,
            sample: s.get_or("sample", 0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), UsageError> {
        if self.workers == 0 || self.replicas == 0 || self.epochs == 0 {
            return Err(usage("workers, replicas and epochs must be at least 1"));
        }
        if self.seq_len == 0 || self.truncation == 0 || self.n_fetch == 0 || self.n_push == 0 {
            return Err(usage("seq_len, truncation, n_fetch and n_push must be at least 1"));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return Err(usage("holdout must lie strictly between 0 and 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(usage("hidden layer sizes must be positive"));
        }
        match (self.net, self.mode) {
            (NetKind::Fc, _) => Ok(()),
            (_, ParallelMode::None | ParallelMode::Data) => Ok(()),
            (net, mode) => Err(usage(format!(
                "{mode:?} parallelism partitions fully connected layers only; it does not apply to {net:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_file_format() {
        let s = Settings::parse("# run\nnet = fc\nseq-len=20 # window\n\nlr=0.5\n").unwrap();
        assert_eq!(s.raw("net"), Some("fc"));
        assert_eq!(s.get::<usize>("seq_len").unwrap(), Some(20));
        assert_eq!(s.get::<f64>("lr").unwrap(), Some(0.5));
        assert!(Settings::parse("just words").is_err());
        assert!(Settings::parse("=3").is_err());
    }

    #[test]
    fn overlay_prefers_later_values() {
        let mut file = Settings::parse("net=fc\nepochs=3").unwrap();
        let mut flags = Settings::default();
        flags.set("epochs", "5");
        file.overlay(flags);
        assert_eq!(file.get::<usize>("epochs").unwrap(), Some(5));
        assert_eq!(file.raw("net"), Some("fc"));
    }

    #[test]
    fn run_config_defaults_and_errors() {
        let s = Settings::parse("net=lstm\nseed=3").unwrap();
        let c = RunConfig::from_settings(&s).unwrap();
        assert_eq!(c.optimizer.batch_size, 32);
        assert!(matches!(c.optimizer.kind, OptimizerKind::RmsProp { .. }));
        assert_eq!(c.seed, 3);
        assert!(RunConfig::from_settings(&Settings::parse("net=mlp").unwrap()).is_err());
        assert!(RunConfig::from_settings(&Settings::parse("net=cnn\nmode=model").unwrap()).is_err());
        assert!(RunConfig::from_settings(&Settings::parse("net=fc\noptimizer=adam").unwrap()).is_err());
        assert!(RunConfig::from_settings(&Settings::parse("net=fc\nworkers=0").unwrap()).is_err());
        let c = RunConfig::from_settings(&Settings::parse("net=fc\nmode=hybrid").unwrap()).unwrap();
        assert_eq!((c.workers, c.replicas), (2, 2));
    }

    #[test]
    fn lists_and_flags() {
        let s = Settings::parse("workers=1, 2,4\ndeterministic=true\nbad=maybe").unwrap();
        assert_eq!(s.list::<usize>("workers").unwrap(), Some(vec![1, 2, 4]));
        assert!(s.flag("deterministic").unwrap());
        assert!(!s.flag("missing").unwrap());
        assert!(s.flag("bad").is_err());
    }
}
