//! Asynchronous data parallelism: a parameter server and model replicas
//! exchanging gradients and parameters over the transport.
//!
//! Endpoint 0 is the server; replica `r` talks through endpoint `r + 1`.
//! Replicas pull every `n_fetch` steps and push accumulated gradients every
//! `n_push` steps. The server applies pushes one at a time in arrival order.

mod engines;

use std::collections::BTreeMap;
use std::time::Duration;

use crate::error::{Error, Result};
use crate::model_parallel::split_uniform;
use crate::network::Parameters;
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::tensor::Rng;
use crate::transport::{Endpoint, Envelope, MessageStats, Tag, Transport, WorkerId, DEFAULT_TIMEOUT};

pub use engines::{GradientEngine, LocalEngine, MpReplica, SequenceEngine};

/// One applied push.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PushRecord {
    pub replica: usize,
    /// Replica step that completed the push window.
    pub step: usize,
    /// Server version at apply time minus the version the window started from.
    pub staleness: u64,
}

/// Holds the global parameters and applies gradient pushes.
#[derive(Debug, Clone)]
pub struct ParameterServer {
    params: Parameters,
    version: u64,
    optimizer: Optimizer,
    staleness: BTreeMap<u64, u64>,
    pushes: Vec<PushRecord>,
}

impl ParameterServer {
    pub fn new(params: Parameters, kind: OptimizerKind) -> Result<Self> {
        if !params.is_finite() {
            return Err(Error::NonFinite("initial parameters"));
        }
        Ok(Self {
            params,
            version: 0,
            optimizer: Optimizer::new(kind),
            staleness: BTreeMap::new(),
            pushes: Vec::new(),
        })
    }

    /// Applies `params -= lr * grads` through the optimizer and bumps the
    /// version. A rejected push leaves the server untouched.
    pub fn push_apply(&mut self, grads: &Parameters, computed_at: u64, lr: f64) -> Result<u64> {
        self.push_from(grads, computed_at, lr, usize::MAX, 0)
    }

    fn push_from(&mut self, grads: &Parameters, computed_at: u64, lr: f64, replica: usize, step: usize) -> Result<u64> {
        if !self.params.same_shape(grads) {
            return Err(Error::Shape("pushed gradients do not match the server parameters".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("pushed gradients"));
        }
        if computed_at > self.version {
            return Err(Error::Inconsistent(format!(
                "gradient computed at version {computed_at}, server is at {}",
                self.version
            )));
        }
        let mut next = self.params.clone();
        let mut optimizer = self.optimizer.clone();
        optimizer.step(&mut next, grads, lr, 1.0)?;
        if !next.is_finite() {
            return Err(Error::NonFinite("updated parameters"));
        }
        self.params = next;
        self.optimizer = optimizer;
        let staleness = self.version - computed_at;
        *self.staleness.entry(staleness).or_default() += 1;
        self.pushes.push(PushRecord {
            replica,
            step,
            staleness,
        });
        self.version += 1;
        Ok(self.version)
    }

    /// Consistent copy of the parameters and the version they belong to.
    pub fn pull(&self) -> (Parameters, u64) {
        (self.params.clone(), self.version)
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameters(&self) -> &Parameters {
        &self.params
    }

    /// Staleness value to number of pushes applied with it.
    pub fn staleness_histogram(&self) -> &BTreeMap<u64, u64> {
        &self.staleness
    }

    pub fn pushes(&self) -> &[PushRecord] {
        &self.pushes
    }
}

/// How replica tasks are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    /// Replicas take turns on the calling thread, one step each per round;
    /// the server handles each request as soon as it is sent.
    RoundRobin,
    /// One thread per replica plus the server. With a seed, every delivery
    /// goes through the seeded scheduler.
    Threaded { schedule_seed: Option<u64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaConfig {
    pub replicas: usize,
    pub n_fetch: usize,
    pub n_push: usize,
    pub batch_size: usize,
    /// Reshuffle each replica's shard every pass when set.
    pub shuffle_seed: Option<u64>,
    pub driver: Driver,
    pub timeout: Duration,
}

impl ReplicaConfig {
    pub fn new(replicas: usize, batch_size: usize) -> Self {
        Self {
            replicas,
            n_fetch: 1,
            n_push: 1,
            batch_size,
            shuffle_seed: None,
            driver: Driver::RoundRobin,
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 || self.n_fetch == 0 || self.n_push == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "replica count, n_fetch, n_push and batch size must all be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub replica: usize,
    pub step: usize,
    /// Mean loss over the step's mini-batch.
    pub loss: f64,
    /// Staleness of the push this step completed, if it pushed.
    pub staleness: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    pub params: Parameters,
    pub version: u64,
    pub staleness: BTreeMap<u64, u64>,
    pub stats: MessageStats,
}

impl TrainingLog {
    pub fn max_staleness(&self) -> u64 {
        self.staleness.keys().next_back().copied().unwrap_or(0)
    }
}

const SERVER: WorkerId = WorkerId(0);

struct ServerTask {
    server: ParameterServer,
    lr: f64,
    finished: usize,
    template: Parameters,
}

impl ServerTask {
    /// Handles one request. Returns false once every replica has finished.
    fn serve_one(&mut self, ep: &mut Endpoint, replicas: usize) -> Result<bool> {
        let m = match ep.wait_for(|e| matches!(e, Envelope::Data(_)))? {
            Envelope::Data(m) => m,
            Envelope::Control { .. } => unreachable!("filtered"),
        };
        match m.tag {
            Tag::ParamPull => {
                let (params, version) = self.server.pull();
                let mut payload = Vec::with_capacity(params.num_params() + 1);
                payload.push(version as f64);
                payload.extend(params.flatten());
                ep.send(m.sender, Tag::ParamState, 0, payload)?;
            }
            Tag::GradPush => {
                if m.payload.len() < 2 {
                    return Err(Error::Shape("gradient push without a header".into()));
                }
                let (computed_at, step) = (m.payload[0] as u64, m.payload[1] as usize);
                let mut grads = self.template.clone();
                grads.assign_flat(&m.payload[2..])?;
                let replica = m.sender.index() - 1;
                match self.server.push_from(&grads, computed_at, self.lr, replica, step) {
                    Ok(_) => {}
                    Err(e @ Error::NonFinite(_)) => log::warn!("rejected push from replica {replica}: {e}"),
                    Err(e) => return Err(e),
                }
            }
            Tag::Shutdown => self.finished += 1,
            other => {
                return Err(Error::Transport(format!(
                    "parameter server cannot handle {}",
                    other.name()
                )))
            }
        }
        Ok(self.finished < replicas)
    }
}

struct Replica<'a, X> {
    index: usize,
    shard: Vec<&'a X>,
    order: Vec<usize>,
    cursor: usize,
    rng: Option<Rng>,
    local: Parameters,
    version: u64,
    window_version: u64,
    acc: Parameters,
    acc_steps: usize,
}

impl<'a, X> Replica<'a, X> {
    fn new(index: usize, shard: Vec<&'a X>, template: &Parameters, shuffle: Option<u64>) -> Self {
        let mut rng = shuffle.map(|s| {
            let mut parent = Rng::new(s);
            (0..=index).map(|_| parent.split()).last().expect("non-empty")
        });
        let mut order: Vec<usize> = (0..shard.len()).collect();
        if let Some(r) = rng.as_mut() {
            r.shuffle(&mut order);
        }
        Self {
            index,
            shard,
            order,
            cursor: 0,
            rng,
            local: template.clone(),
            version: 0,
            window_version: 0,
            acc: template.zeros_like(),
            acc_steps: 0,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<&'a X> {
        if self.cursor >= self.order.len() {
            self.cursor = 0;
            if let Some(r) = self.rng.as_mut() {
                r.shuffle(&mut self.order);
            }
        }
        let end = (self.cursor + size).min(self.order.len());
        let batch = self.order[self.cursor..end].iter().map(|&i| self.shard[i]).collect();
        self.cursor = end;
        batch
    }

    fn step<E: GradientEngine<Example = X>>(
        &mut self,
        step: usize,
        last: bool,
        cfg: &ReplicaConfig,
        ep: &mut Endpoint,
        engine: &mut E,
        pump: &mut dyn FnMut() -> Result<()>,
    ) -> Result<StepRecord> {
        if step.is_multiple_of(cfg.n_fetch) {
            ep.send(SERVER, Tag::ParamPull, 0, Vec::new())?;
            pump()?;
            let m = ep.recv_data(Tag::ParamState, 0, Some(SERVER))?;
            if m.payload.is_empty() {
                return Err(Error::Shape("empty parameter state".into()));
            }
            self.version = m.payload[0] as u64;
            self.local.assign_flat(&m.payload[1..])?;
        }
        if self.acc_steps == 0 {
            self.window_version = self.version;
        }
        let batch = self.next_batch(cfg.batch_size);
        let (mut g, total) = engine.batch_gradient(&self.local, &batch)?;
        let scale = 1.0 / batch.len() as f64;
        g.scale(scale);
        self.acc.add_assign(&g)?;
        self.acc_steps += 1;
        if self.acc_steps == cfg.n_push || last {
            let mut payload = Vec::with_capacity(self.acc.num_params() + 2);
            payload.push(self.window_version as f64);
            payload.push(step as f64);
            payload.extend(self.acc.flatten());
            ep.send(SERVER, Tag::GradPush, 0, payload)?;
            pump()?;
            self.acc = self.acc.zeros_like();
            self.acc_steps = 0;
        }
        Ok(StepRecord {
            replica: self.index,
            step,
            loss: total * scale,
            staleness: None,
        })
    }
}

/// Trains with `cfg.replicas` replicas for `steps` steps each. `data` is
/// split into contiguous shards, one per replica; `engines[r]` computes
/// replica `r`'s gradients.
pub fn replica_run<E>(
    cfg: &ReplicaConfig,
    optimizer: &OptimizerConfig,
    init: &Parameters,
    data: &[E::Example],
    engines: Vec<E>,
    steps: usize,
) -> Result<TrainingLog>
where
    E: GradientEngine + Send,
    E::Example: Sync,
{
    optimizer.validate()?;
    let server = ParameterServer::new(init.clone(), optimizer.kind)?;
    replica_run_on(cfg, optimizer.learning_rate, server, data, engines, steps).map(|(log, _)| log)
}

/// Like [`replica_run`] but continues from an existing server, keeping its
/// version and optimizer state. The log's staleness histogram covers only
/// this run; the returned server carries the full history.
pub fn replica_run_on<E>(
    cfg: &ReplicaConfig,
    lr: f64,
    server: ParameterServer,
    data: &[E::Example],
    engines: Vec<E>,
    steps: usize,
) -> Result<(TrainingLog, ParameterServer)>
where
    E: GradientEngine + Send,
    E::Example: Sync,
{
    cfg.validate()?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {lr}")));
    }
    if engines.len() != cfg.replicas {
        return Err(Error::Config(format!(
            "{} gradient engines for {} replicas",
            engines.len(),
            cfg.replicas
        )));
    }
    if data.len() < cfg.replicas {
        return Err(Error::Config(format!(
            "{} examples cannot feed {} replicas",
            data.len(),
            cfg.replicas
        )));
    }
    let init = server.parameters().clone();
    let init = &init;
    let first_push = server.pushes().len();
    let mut replicas: Vec<Replica<'_, E::Example>> = split_uniform(data.len(), cfg.replicas)
        .into_iter()
        .enumerate()
        .map(|(r, range)| Replica::new(r, data[range].iter().collect(), init, cfg.shuffle_seed))
        .collect();
    let mut task = ServerTask {
        server,
        lr,
        finished: 0,
        template: init.zeros_like(),
    };
    let size = cfg.replicas + 1;
    let (transport, mut eps) = match cfg.driver {
        Driver::Threaded {
            schedule_seed: Some(seed),
        } => Transport::scheduled(size, seed, cfg.timeout),
        _ => Transport::channel(size, cfg.timeout),
    };
    let mut server_ep = eps.remove(0);
    let n = cfg.replicas;
    let mut records = Vec::with_capacity(n * steps);

    match cfg.driver {
        Driver::RoundRobin => {
            let mut engines = engines;
            for step in 0..steps {
                for (r, replica) in replicas.iter_mut().enumerate() {
                    let mut pump = || task.serve_one(&mut server_ep, n).map(|_| ());
                    let rec = replica.step(step, step + 1 == steps, cfg, &mut eps[r], &mut engines[r], &mut pump)?;
                    records.push(rec);
                }
            }
            for ep in &eps {
                ep.send(SERVER, Tag::Shutdown, 0, Vec::new())?;
                task.serve_one(&mut server_ep, n)?;
            }
        }
        Driver::Threaded { .. } => {
            let outcome: Result<Vec<Vec<StepRecord>>> = std::thread::scope(|scope| {
                let task = &mut task;
                let server = scope.spawn(move || -> Result<()> {
                    let mut ep = server_ep;
                    while task.serve_one(&mut ep, n)? {}
                    Ok(())
                });
                let handles: Vec<_> = replicas
                    .into_iter()
                    .zip(engines)
                    .zip(eps)
                    .map(|((mut replica, mut engine), mut ep)| {
                        scope.spawn(move || -> Result<Vec<StepRecord>> {
                            let mut pump = || Ok(());
                            let mut out = Vec::with_capacity(steps);
                            let run = (0..steps).try_for_each(|step| {
                                let rec = replica.step(step, step + 1 == steps, cfg, &mut ep, &mut engine, &mut pump)?;
                                out.push(rec);
                                Ok::<_, Error>(())
                            });
                            ep.send(SERVER, Tag::Shutdown, 0, Vec::new())?;
                            run.map(|_| out)
                        })
                    })
                    .collect();
                let joined: Vec<Result<Vec<StepRecord>>> = handles
                    .into_iter()
                    .map(|h| h.join().map_err(|_| Error::Transport("replica thread panicked".into()))?)
                    .collect();
                server
                    .join()
                    .map_err(|_| Error::Transport("parameter server thread panicked".into()))??;
                joined.into_iter().collect()
            });
            records = outcome?.into_iter().flatten().collect();
            records.sort_by_key(|r| (r.step, r.replica));
        }
    }

    let applied = &task.server.pushes()[first_push..];
    let pushes: BTreeMap<(usize, usize), u64> = applied.iter().map(|p| ((p.replica, p.step), p.staleness)).collect();
    let mut staleness = BTreeMap::new();
    for p in applied {
        *staleness.entry(p.staleness).or_insert(0) += 1;
    }
    for rec in &mut records {
        rec.staleness = pushes.get(&(rec.replica, rec.step)).copied();
    }
    let log = TrainingLog {
        steps: records,
        params: task.server.parameters().clone(),
        version: task.server.version(),
        staleness,
        stats: transport.stats_snapshot(),
    };
    Ok((log, task.server))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, LayerParams, LossKind, NetworkSpec};
    use crate::tensor::{Activation, DenseMatrix, Vector};

    fn scalar(w: f64) -> Parameters {
        Parameters {
            layers: vec![LayerParams::Dense {
                weights: DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
                bias: Vector::from(vec![0.0]),
            }],
        }
    }

    #[test]
    fn fresh_server_and_versions() {
        let mut ps = ParameterServer::new(scalar(1.0), OptimizerKind::Sgd).unwrap();
        assert_eq!(ps.pull().1, 0);
        for k in 1..=3 {
            assert_eq!(ps.push_apply(&scalar(0.0), ps.version(), 0.1).unwrap(), k);
        }
        assert_eq!(ps.staleness_histogram().values().sum::<u64>(), 3);
    }

    #[test]
    fn zero_rate_only_bumps_version() {
        let mut ps = ParameterServer::new(scalar(1.0), OptimizerKind::Sgd).unwrap();
        ps.push_apply(&scalar(3.0), 0, 0.0).unwrap();
        assert_eq!(ps.pull(), (scalar(1.0), 1));
    }

    #[test]
    fn one_sgd_step() {
        let mut ps = ParameterServer::new(scalar(1.0), OptimizerKind::Sgd).unwrap();
        ps.push_apply(&scalar(0.5), 0, 0.1).unwrap();
        assert_eq!(ps.parameters(), &scalar(0.95));
    }

    #[test]
    fn non_finite_push_is_rejected() {
        let mut ps = ParameterServer::new(scalar(1.0), OptimizerKind::Sgd).unwrap();
        assert!(matches!(ps.push_apply(&scalar(f64::NAN), 0, 0.1), Err(Error::NonFinite(_))));
        assert_eq!(ps.version(), 0);
        assert_eq!(ps.parameters(), &scalar(1.0));
        assert!(ps.push_apply(&scalar(1.0), 1, 0.1).is_err());
    }

    fn toy() -> (NetworkSpec, Parameters, Vec<crate::train::Example>) {
        let spec = NetworkSpec::dense(&[3, 5, 2], Activation::Sigmoid, Activation::Softmax).unwrap();
        let params = init_params(&spec, &mut Rng::new(2));
        let mut rng = Rng::new(8);
        let data = (0..40)
            .map(|i| {
                let x = rng.uniform(-1.0, 1.0, 3).unwrap().into_inner();
                let y = Vector::one_hot(2, i % 2).into_inner();
                (x, y)
            })
            .collect();
        (spec, params, data)
    }

    #[test]
    fn single_replica_matches_synchronous_sgd() {
        let (spec, params, data) = toy();
        let opt = OptimizerConfig::sgd(0.3).with_batch(4);
        let cfg = ReplicaConfig::new(1, 4);
        let engine = LocalEngine::new(&spec, LossKind::CrossEntropy);
        let log = replica_run(&cfg, &opt, &params, &data, vec![engine.clone()], 25).unwrap();

        let mut p = params.clone();
        let mut o = Optimizer::new(OptimizerKind::Sgd);
        let mut e = engine;
        for step in 0..25 {
            let start = (step * 4) % 40;
            let batch: Vec<_> = data[start..start + 4].iter().collect();
            let (g, _) = e.batch_gradient(&p, &batch).unwrap();
            o.step(&mut p, &g, 0.3, 0.25).unwrap();
        }
        assert_eq!(log.params, p);
        assert_eq!(log.version, 25);
        assert_eq!(log.staleness.get(&0), Some(&25));
    }

    #[test]
    fn round_robin_staleness_is_bounded() {
        let (spec, params, data) = toy();
        let opt = OptimizerConfig::sgd(0.1);
        let mut cfg = ReplicaConfig::new(3, 2);
        cfg.n_push = 4;
        let engines = vec![LocalEngine::new(&spec, LossKind::CrossEntropy); 3];
        let log = replica_run(&cfg, &opt, &params, &data, engines, 16).unwrap();
        assert!(log.max_staleness() <= 2 * 4 + 3);
        assert!(log.max_staleness() > 0);
        assert_eq!(log.staleness.values().sum::<u64>(), log.version);
        assert_eq!(log.version, 12);
    }

    #[test]
    fn scheduled_threads_are_reproducible() {
        let (spec, params, data) = toy();
        let opt = OptimizerConfig::momentum(0.1, 0.9);
        let mut cfg = ReplicaConfig::new(2, 4);
        cfg.driver = Driver::Threaded {
            schedule_seed: Some(17),
        };
        cfg.shuffle_seed = Some(3);
        let run = || {
            let engines = vec![LocalEngine::new(&spec, LossKind::CrossEntropy); 2];
            replica_run(&cfg, &opt, &params, &data, engines, 10).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        assert_eq!(a.steps, b.steps);
        assert_eq!(a.version, 20);
    }

    #[test]
    fn free_threads_apply_every_push() {
        let (spec, params, data) = toy();
        let mut cfg = ReplicaConfig::new(4, 2);
        cfg.driver = Driver::Threaded { schedule_seed: None };
        cfg.n_fetch = 2;
        let engines = vec![LocalEngine::new(&spec, LossKind::CrossEntropy); 4];
        let log = replica_run(&cfg, &OptimizerConfig::sgd(0.1), &params, &data, engines, 6).unwrap();
        assert_eq!(log.version, 24);
        assert_eq!(log.steps.len(), 24);
        assert!(log.stats.tag(Tag::GradPush).messages == 24);
    }

    #[test]
    fn bad_configs() {
        let (spec, params, data) = toy();
        let e = || vec![LocalEngine::new(&spec, LossKind::Mse)];
        let opt = OptimizerConfig::sgd(0.1);
        let mut cfg = ReplicaConfig::new(1, 4);
        cfg.n_fetch = 0;
        assert!(replica_run(&cfg, &opt, &params, &data, e(), 1).is_err());
        assert!(replica_run(&ReplicaConfig::new(2, 4), &opt, &params, &data, e(), 1).is_err());
        assert!(replica_run(&ReplicaConfig::new(1, 4), &opt, &params, &data[..0], e(), 1).is_err());
    }
}
