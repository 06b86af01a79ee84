//! Epoch loops for single-machine, model-parallel, data-parallel and hybrid
//! training, plus evaluation helpers.

use std::time::Instant;

use crate::data_io::{batches, Sequence};
use crate::data_parallel::{
    replica_run_on, GradientEngine, LocalEngine, MpReplica, ParameterServer, ReplicaConfig, SequenceEngine,
};
use crate::error::{Error, Result};
use crate::model_parallel::{MpConfig, MpEngine};
use crate::network::{forward, forward_sequence, LossKind, NetworkSpec, Parameters};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tensor::{Rng, Vector};
use crate::transport::MessageStats;

/// A labelled feedforward example: input and one-hot target.
pub type Example = (Vec<f64>, Vec<f64>);

/// One row of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub wall_ms: u64,
    pub messages: u64,
    pub data_units: u64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,test_accuracy,wall_ms,messages,data_units";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{},{},{}",
            self.epoch, self.train_loss, self.test_accuracy, self.wall_ms, self.messages, self.data_units
        )
    }
}

fn argmax(v: &[f64]) -> usize {
    Vector::from(v.to_vec()).argmax()
}

/// Fraction of examples whose arg-max output matches the arg-max target.
pub fn accuracy(spec: &NetworkSpec, params: &Parameters, data: &[Example]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, y) in data {
        let trace = forward(spec, params, x)?;
        if trace.output().argmax() == argmax(y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Next-character accuracy over the active steps of `seqs`.
pub fn sequence_accuracy(spec: &NetworkSpec, params: &Parameters, seqs: &[Sequence]) -> Result<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for s in seqs {
        let trace = forward_sequence(spec, params, &s.inputs, &s.mask)?;
        for (step, target) in trace.steps.iter().zip(&s.targets) {
            if let Some(step) = step {
                total += 1;
                if step.output().argmax() == target.argmax() {
                    hits += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}

/// One shuffled pass of mini-batch training on one machine. Each update
/// uses the batch-mean gradient. Returns the mean loss per example.
pub fn train_epoch_local(
    spec: &NetworkSpec,
    params: &mut Parameters,
    optimizer: &mut Optimizer,
    cfg: &OptimizerConfig,
    data: &[Example],
    loss: LossKind,
    rng: &mut Rng,
) -> Result<f64> {
    cfg.validate()?;
    let mut engine = LocalEngine::new(spec, loss);
    let mut total = 0.0;
    for batch in batches(data.len(), cfg.batch_size, Some(rng))? {
        let refs: Vec<&Example> = batch.indices().map(|i| &data[i]).collect();
        let (grads, l) = engine.batch_gradient(params, &refs)?;
        optimizer.step(params, &grads, cfg.learning_rate, 1.0 / refs.len() as f64)?;
        total += l;
    }
    Ok(if data.is_empty() { 0.0 } else { total / data.len() as f64 })
}

/// One shuffled pass over `seqs` with truncated backpropagation through time.
/// Each update uses the gradient averaged over the batch's active steps.
/// Returns cross-entropy per character.
pub fn train_epoch_sequences(
    spec: &NetworkSpec,
    params: &mut Parameters,
    optimizer: &mut Optimizer,
    cfg: &OptimizerConfig,
    seqs: &[Sequence],
    truncation: usize,
    rng: &mut Rng,
) -> Result<f64> {
    cfg.validate()?;
    let mut engine = SequenceEngine::new(spec).with_truncation(truncation);
    let (mut total, mut chars) = (0.0, 0usize);
    for batch in batches(seqs.len(), cfg.batch_size, Some(rng))? {
        let refs: Vec<&Sequence> = batch.indices().map(|i| &seqs[i]).collect();
        let active: usize = refs.iter().map(|s| s.mask.active_count()).sum();
        if active == 0 {
            continue;
        }
        let (grads, l) = engine.batch_gradient(params, &refs)?;
        optimizer.step(params, &grads, cfg.learning_rate, 1.0 / active as f64)?;
        total += l;
        chars += active;
    }
    Ok(if chars == 0 { 0.0 } else { total / chars as f64 })
}

/// Cross-entropy per character of `seqs` without training.
pub fn sequence_loss(spec: &NetworkSpec, params: &Parameters, seqs: &[Sequence]) -> Result<f64> {
    let mut engine = SequenceEngine::new(spec);
    let (mut total, mut chars) = (0.0, 0usize);
    for s in seqs {
        let (_, l) = engine.batch_gradient(params, &[s])?;
        total += l;
        chars += s.mask.active_count();
    }
    Ok(if chars == 0 { 0.0 } else { total / chars as f64 })
}

/// One shuffled pass through a model-parallel engine. Returns the mean loss
/// per example and the traffic of the pass.
pub fn train_epoch_mp(
    engine: &mut MpEngine,
    data: &[Example],
    batch_size: usize,
    lr: f64,
    loss: LossKind,
    rng: &mut Rng,
) -> Result<(f64, MessageStats)> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut stats = MessageStats::default();
    let mut total = 0.0;
    for batch in batches(data.len(), batch_size, Some(rng))? {
        let refs: Vec<(&[f64], &[f64])> = batch
            .indices()
            .map(|i| (data[i].0.as_slice(), data[i].1.as_slice()))
            .collect();
        let (mean, delta) = engine.train_batch(&refs, loss, lr)?;
        total += mean * refs.len() as f64;
        stats = stats.plus(&delta);
    }
    Ok((if data.is_empty() { 0.0 } else { total / data.len() as f64 }, stats))
}

/// One pass of parameter-server training: each replica walks its shard once.
/// Returns the mean step loss and the traffic of the pass.
pub fn train_epoch_replicas<E>(
    cfg: &ReplicaConfig,
    lr: f64,
    server: &mut Option<ParameterServer>,
    data: &[E::Example],
    engines: Vec<E>,
) -> Result<(f64, MessageStats)>
where
    E: GradientEngine + Send,
    E::Example: Sync,
{
    let shard = data.len().div_ceil(cfg.replicas.max(1));
    let steps = shard.div_ceil(cfg.batch_size.max(1));
    let current = server
        .take()
        .ok_or_else(|| Error::Config("parameter server already consumed".into()))?;
    let (log, next) = replica_run_on(cfg, lr, current, data, engines, steps)?;
    *server = Some(next);
    let mean = if log.steps.is_empty() {
        0.0
    } else {
        log.steps.iter().map(|s| s.loss).sum::<f64>() / log.steps.len() as f64
    };
    Ok((mean, log.stats))
}

/// `replicas` model-parallel groups of `config.workers` tasks each.
pub fn hybrid_engines(
    spec: &NetworkSpec,
    params: &Parameters,
    config: &MpConfig,
    replicas: usize,
    loss: LossKind,
    kind: crate::optim::OptimizerKind,
) -> Result<Vec<MpReplica>> {
    (0..replicas)
        .map(|r| {
            let mut c = config.clone();
            c.seed = c.seed.wrapping_add(r as u64);
            MpEngine::new(spec, params, c, kind).map(|e| MpReplica::new(e, loss))
        })
        .collect()
}

/// Milliseconds since `start`, or zero when timings are suppressed.
pub fn elapsed_ms(start: Instant, deterministic: bool) -> u64 {
    if deterministic {
        0
    } else {
        start.elapsed().as_millis() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::CharCorpus;
    use crate::data_parallel::Driver;
    use crate::model_parallel::ExchangeMode;
    use crate::network::init_params;
    use crate::optim::OptimizerKind;
    use crate::tensor::Activation;

    fn blobs(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = Rng::new(seed);
        (0..n)
            .map(|i| {
                let c = i % 3;
                let mut x = rng.uniform(-0.3, 0.3, 6).unwrap().into_inner();
                x[c] += 1.0;
                x[c + 3] -= 1.0;
                (x, Vector::one_hot(3, c).into_inner())
            })
            .collect()
    }

    fn net() -> NetworkSpec {
        NetworkSpec::dense(&[6, 8, 3], Activation::Sigmoid, Activation::Softmax).unwrap()
    }

    #[test]
    fn local_training_learns_blobs() {
        let spec = net();
        let data = blobs(90, 1);
        let mut rng = Rng::new(2);
        let mut params = init_params(&spec, &mut rng);
        let cfg = OptimizerConfig::sgd(0.5).with_batch(5);
        let mut opt = Optimizer::new(cfg.kind);
        let first = train_epoch_local(&spec, &mut params, &mut opt, &cfg, &data, LossKind::CrossEntropy, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..20 {
            last = train_epoch_local(&spec, &mut params, &mut opt, &cfg, &data, LossKind::CrossEntropy, &mut rng).unwrap();
        }
        assert!(last < first);
        assert!(accuracy(&spec, &params, &data).unwrap() > 0.95);
    }

    #[test]
    fn mp_epoch_matches_local_epoch() {
        let spec = net();
        let data = blobs(12, 3);
        let init = init_params(&spec, &mut Rng::new(4));
        let cfg = OptimizerConfig::sgd(0.3).with_batch(4);

        let mut local = init.clone();
        let mut opt = Optimizer::new(cfg.kind);
        let a = train_epoch_local(&spec, &mut local, &mut opt, &cfg, &data, LossKind::CrossEntropy, &mut Rng::new(9)).unwrap();

        let mut engine = MpEngine::new(&spec, &init, MpConfig::new(2, ExchangeMode::Hypercube), cfg.kind).unwrap();
        let (b, stats) = train_epoch_mp(&mut engine, &data, 4, 0.3, LossKind::CrossEntropy, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(engine.parameters().unwrap(), local);
        // K per example for [6, 8, 3] at F = 2 is 1 + 2 + 2.
        assert_eq!(stats.message_count, 5 * 12);
    }

    #[test]
    fn replica_epochs_keep_server_state() {
        let spec = net();
        let data = blobs(40, 5);
        let init = init_params(&spec, &mut Rng::new(6));
        let cfg = ReplicaConfig::new(2, 5);
        let mut server = Some(ParameterServer::new(init, OptimizerKind::Momentum { mu: 0.9 }).unwrap());
        let engines = || vec![LocalEngine::new(&spec, LossKind::CrossEntropy); 2];
        let (first, s1) = train_epoch_replicas(&cfg, 0.2, &mut server, &data, engines()).unwrap();
        let (second, _) = train_epoch_replicas(&cfg, 0.2, &mut server, &data, engines()).unwrap();
        assert!(second < first);
        assert_eq!(server.as_ref().unwrap().version(), 16);
        // Four steps per replica: a pull and a push each.
        assert_eq!(s1.message_count, 2 * 4 * 3 + 2);
    }

    #[test]
    fn hybrid_epoch_runs() {
        let spec = net();
        let data = blobs(24, 7);
        let init = init_params(&spec, &mut Rng::new(8));
        let mut cfg = ReplicaConfig::new(2, 4);
        cfg.driver = Driver::Threaded { schedule_seed: Some(3) };
        let engines = hybrid_engines(
            &spec,
            &init,
            &MpConfig::new(2, ExchangeMode::Hypercube),
            2,
            LossKind::CrossEntropy,
            OptimizerKind::Sgd,
        )
        .unwrap();
        let mut server = Some(ParameterServer::new(init, OptimizerKind::Sgd).unwrap());
        let (loss, _) = train_epoch_replicas(&cfg, 0.3, &mut server, &data, engines).unwrap();
        assert!(loss.is_finite());
        assert_eq!(server.unwrap().version(), 6);
    }

    #[test]
    fn sequence_training_reduces_loss() {
        let corpus = CharCorpus::from_text(&"abcabcabcabcabcabcabcabc abcabcabc".repeat(6)).unwrap();
        let spec = NetworkSpec::char_model(corpus.vocab_size(), &[12], true).unwrap();
        let mut rng = Rng::new(11);
        let mut params = init_params(&spec, &mut rng);
        let cfg = OptimizerConfig::rmsprop(0.02).with_batch(4);
        let mut opt = Optimizer::new(cfg.kind);
        let seqs = corpus.sequences(20, None).unwrap();
        let before = sequence_loss(&spec, &params, &seqs).unwrap();
        for _ in 0..15 {
            train_epoch_sequences(&spec, &mut params, &mut opt, &cfg, &seqs, 10, &mut rng).unwrap();
        }
        let after = sequence_loss(&spec, &params, &seqs).unwrap();
        assert!(after < 0.5 * before, "{before} -> {after}");
        assert!(sequence_accuracy(&spec, &params, &seqs).unwrap() > 0.7);
    }

    #[test]
    fn csv_row_layout() {
        let r = EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            test_accuracy: 0.25,
            wall_ms: 0,
            messages: 7,
            data_units: 9,
        };
        assert_eq!(r.csv_row(), "1,0.500000,0.250000,0,7,9");
    }
}
