use std::ops::Range;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::model_parallel::{make_shard_map, ExchangeMode, MpConfig, ShardMap};
use crate::network::{dense_pre, loss, output_delta, ForwardTrace, LayerParams, LossKind, NetworkSpec, Parameters};
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Activation, DenseMatrix, Vector};
use crate::transport::{Endpoint, Envelope, MessageStats, Tag, Transport, WorkerId};

/// Weights and gradients one worker owns. For hidden layer `h + 1`:
/// `col[h]` is `W^h[:, own[h]]`, `bias[h]` its bias slice, and `row[h]` is
/// `W^{h+1}[own[h], :]`, a replica of rows whose columns other workers own.
#[derive(Debug, Clone, PartialEq)]
struct ShardData {
    own: Vec<Range<usize>>,
    col: Vec<DenseMatrix>,
    bias: Vec<Vector>,
    row: Vec<DenseMatrix>,
    g_col: Vec<DenseMatrix>,
    g_bias: Vec<Vector>,
    g_row: Vec<DenseMatrix>,
}

struct Shard {
    data: ShardData,
    acts: Vec<Activation>,
    optimizer: Optimizer,
}

fn dense(p: &LayerParams) -> Result<(&DenseMatrix, &Vector)> {
    match p {
        LayerParams::Dense { weights, bias } => Ok((weights, bias)),
        _ => Err(Error::Config("model parallelism partitions dense layers only".into())),
    }
}

impl ShardData {
    fn cut(params: &Parameters, map: &ShardMap, worker: usize) -> Result<Self> {
        let hidden = map.partitioned();
        let mut d = ShardData {
            own: Vec::with_capacity(hidden),
            col: Vec::with_capacity(hidden),
            bias: Vec::with_capacity(hidden),
            row: Vec::with_capacity(hidden),
            g_col: Vec::new(),
            g_bias: Vec::new(),
            g_row: Vec::new(),
        };
        for h in 0..hidden {
            let own = map.range(h, worker);
            let (w, b) = dense(&params.layers[h])?;
            let (next, _) = dense(&params.layers[h + 1])?;
            d.col.push(w.columns(own.start, own.end));
            d.bias.push(Vector::from(&b[own.clone()]));
            d.row.push(next.row_block(own.start, own.end));
            d.own.push(own);
        }
        d.zero_grads();
        Ok(d)
    }

    fn zero_grads(&mut self) {
        self.g_col = self.col.iter().map(|m| DenseMatrix::zeros(m.rows(), m.cols())).collect();
        self.g_bias = self.bias.iter().map(|b| Vector::zeros(b.len())).collect();
        self.g_row = self.row.iter().map(|m| DenseMatrix::zeros(m.rows(), m.cols())).collect();
    }

    fn grads_finite(&self) -> bool {
        self.g_col.iter().all(DenseMatrix::is_finite)
            && self.g_bias.iter().all(Vector::is_finite)
            && self.g_row.iter().all(DenseMatrix::is_finite)
    }
}

impl Shard {
    fn new(data: ShardData, acts: Vec<Activation>, kind: OptimizerKind) -> Self {
        Self {
            data,
            acts,
            optimizer: Optimizer::new(kind),
        }
    }

    fn forward_slice(&self, h: usize, a_prev: &[f64]) -> Result<Vec<f64>> {
        let pre = dense_pre(&self.data.col[h], &self.data.bias[h], a_prev)?;
        Ok(self.acts[h].apply(&pre)?.into_inner())
    }

    /// One backward stage for hidden layer `h + 1`, given the full error of
    /// the layer above. Returns this worker's slice of the layer's error.
    fn backward_stage(&mut self, h: usize, a_prev: &[f64], a_own: &[f64], delta_next: &[f64]) -> Result<Vec<f64>> {
        let d = &mut self.data;
        d.g_row[h].add_outer(a_own, delta_next)?;
        let back = d.row[h].mul_vec(delta_next)?;
        let delta = self.acts[h].backprop(a_own, &back);
        d.g_col[h].add_outer(a_prev, &delta)?;
        for (g, x) in d.g_bias[h].iter_mut().zip(&delta) {
            *g += x;
        }
        Ok(delta)
    }

    fn apply(&mut self, lr: f64, scale: f64) -> Result<()> {
        let d = &mut self.data;
        if !d.grads_finite() {
            return Err(Error::NonFinite("shard gradients"));
        }
        let grads: Vec<&[f64]> = d
            .g_col
            .iter()
            .map(DenseMatrix::data)
            .chain(d.g_bias.iter().map(Vector::as_slice))
            .chain(d.g_row.iter().map(DenseMatrix::data))
            .collect();
        let mut params: Vec<&mut [f64]> = d
            .col
            .iter_mut()
            .map(DenseMatrix::data_mut)
            .chain(d.bias.iter_mut().map(|b| b.as_mut_slice()))
            .chain(d.row.iter_mut().map(DenseMatrix::data_mut))
            .collect();
        self.optimizer.step_slices(&mut params, &grads, lr, scale)
    }
}

/// Activations one task keeps between its forward and backward pass.
struct Pass {
    /// `full[i]` is the complete activation of layer `i` when this task has it.
    full: Vec<Option<Vec<f64>>>,
    /// Own slice of each hidden layer's activation.
    mine: Vec<Vec<f64>>,
}

impl Pass {
    fn full(&self, layer: usize) -> Result<&[f64]> {
        self.full[layer]
            .as_deref()
            .ok_or_else(|| Error::Inconsistent(format!("activation of layer {layer} was never received")))
    }
}

enum Command {
    Apply { lr: f64, scale: f64 },
    ZeroGrads,
    Export,
    Load(Box<ShardData>),
    Shutdown,
}

fn forward_pass(ep: &mut Endpoint, shard: &Shard, map: &ShardMap, mode: ExchangeMode, input: &[f64]) -> Result<Pass> {
    let hidden = map.partitioned();
    let mut pass = Pass {
        full: vec![None; hidden + 1],
        mine: Vec::with_capacity(hidden),
    };
    pass.full[0] = Some(input.to_vec());
    let me = ep.id();
    for h in 0..hidden {
        if mode == ExchangeMode::MasterRelay && h > 0 && !me.is_master() {
            let m = ep.recv_data(Tag::ActivationBroadcast, h, Some(WorkerId::MASTER))?;
            pass.full[h] = Some(m.payload);
        }
        if mode == ExchangeMode::MasterRelay && h > 0 && me.is_master() {
            ep.broadcast(Tag::ActivationBroadcast, h, pass.full(h)?)?;
        }
        let a = shard.forward_slice(h, pass.full(h)?)?;
        match mode {
            ExchangeMode::Hypercube => {
                let whole = ep.allgather_hypercube(Tag::PartialActivation, h + 1, &a, &map.sizes(h))?;
                pass.full[h + 1] = Some(whole);
            }
            ExchangeMode::MasterRelay if me.is_master() => {
                let mut whole = a.clone();
                for m in ep.gather(Tag::PartialActivation, h + 1, ep.size() - 1)? {
                    let want = map.range(h, m.sender.index()).len();
                    if m.payload.len() != want {
                        return Err(Error::Shape(format!(
                            "{} sent {} activations, owns {want}",
                            m.sender,
                            m.payload.len()
                        )));
                    }
                    whole.extend_from_slice(&m.payload);
                }
                pass.full[h + 1] = Some(whole);
            }
            ExchangeMode::MasterRelay => {
                ep.send(WorkerId::MASTER, Tag::PartialActivation, h + 1, a.clone())?;
            }
        }
        pass.mine.push(a);
    }
    Ok(pass)
}

fn worker_main(mut ep: Endpoint, mut shard: Shard, map: ShardMap, mode: ExchangeMode, inputs: usize) -> Result<()> {
    let mut pass: Option<Pass> = None;
    loop {
        let env = ep.wait_for(|e| match e {
            Envelope::Control { .. } => true,
            Envelope::Data(m) => matches!(m.tag, Tag::InitData | Tag::ErrorBroadcast),
        })?;
        match env {
            Envelope::Control { body, .. } => {
                let cmd = body
                    .downcast::<Command>()
                    .map_err(|_| Error::Transport("unexpected control payload".into()))?;
                match *cmd {
                    Command::Apply { lr, scale } => shard.apply(lr, scale)?,
                    Command::ZeroGrads => shard.data.zero_grads(),
                    Command::Export => ep.send_control(WorkerId::MASTER, Box::new(shard.data.clone()))?,
                    Command::Load(data) => {
                        shard.data = *data;
                        shard.optimizer = Optimizer::new(shard.optimizer.kind());
                    }
                    Command::Shutdown => return Ok(()),
                }
            }
            Envelope::Data(m) if m.tag == Tag::InitData => {
                if m.payload.len() < inputs {
                    return Err(Error::Shape("init message shorter than the input".into()));
                }
                pass = Some(forward_pass(&mut ep, &shard, &map, mode, &m.payload[..inputs])?);
            }
            Envelope::Data(m) => {
                let p = pass
                    .as_ref()
                    .ok_or_else(|| Error::Inconsistent("error vector before any forward pass".into()))?;
                let layer = m.layer as usize;
                if layer < 2 || layer > map.partitioned() + 1 {
                    return Err(Error::Inconsistent(format!("error vector for layer {layer}")));
                }
                let h = layer - 2;
                let delta = shard.backward_stage(h, p.full(h)?, &p.mine[h], &m.payload)?;
                ep.send(WorkerId::MASTER, Tag::PartialError, h + 1, delta)?;
            }
        }
    }
}

/// Output layer, held whole by the master.
struct Head {
    weights: DenseMatrix,
    bias: Vector,
    g_weights: DenseMatrix,
    g_bias: Vector,
    act: Activation,
    optimizer: Optimizer,
}

/// Master-side handle on `F` tasks training one network together.
///
/// The calling thread acts as worker 0; `F - 1` worker threads hold the other
/// shards. Gradients accumulate across examples until [`MpEngine::apply`] or
/// [`MpEngine::zero_grads`].
pub struct MpEngine {
    spec: NetworkSpec,
    config: MpConfig,
    map: ShardMap,
    transport: Transport,
    ep: Option<Endpoint>,
    workers: Vec<JoinHandle<Result<()>>>,
    shard: Shard,
    head: Head,
    pass: Option<(Pass, Vector)>,
}

impl MpEngine {
    pub fn new(spec: &NetworkSpec, params: &Parameters, config: MpConfig, optimizer: OptimizerKind) -> Result<Self> {
        config.validate()?;
        params.validate(spec)?;
        let map = make_shard_map(spec, config.workers)?;
        let hidden = map.partitioned();
        let acts: Vec<Activation> = spec.layers().iter().map(|l| l.activation()).collect();
        let hidden_acts = acts[..hidden].to_vec();
        if hidden_acts.contains(&Activation::Softmax) {
            return Err(Error::Config("softmax is only supported on the output layer".into()));
        }
        let (transport, mut endpoints) = if config.deterministic {
            Transport::scheduled(config.workers, config.seed, config.timeout)
        } else {
            Transport::channel(config.workers, config.timeout)
        };
        let mut workers = Vec::with_capacity(config.workers - 1);
        let ep = Some(endpoints.remove(0));
        for (w, ep) in endpoints.into_iter().enumerate().map(|(i, ep)| (i + 1, ep)) {
            let shard = Shard::new(ShardData::cut(params, &map, w)?, hidden_acts.clone(), optimizer);
            let (map, mode, inputs) = (map.clone(), config.mode, spec.input_len());
            let handle = std::thread::Builder::new()
                .name(format!("mp-worker-{w}"))
                .spawn(move || worker_main(ep, shard, map, mode, inputs))?;
            workers.push(handle);
        }
        let shard = Shard::new(ShardData::cut(params, &map, 0)?, hidden_acts, optimizer);
        let (weights, bias) = dense(&params.layers[hidden])?;
        let head = Head {
            weights: weights.clone(),
            bias: bias.clone(),
            g_weights: DenseMatrix::zeros(weights.rows(), weights.cols()),
            g_bias: Vector::zeros(bias.len()),
            act: acts[hidden],
            optimizer: Optimizer::new(optimizer),
        };
        Ok(Self {
            spec: spec.clone(),
            config,
            map,
            transport,
            ep,
            workers,
            shard,
            head,
            pass: None,
        })
    }

    pub fn config(&self) -> &MpConfig {
        &self.config
    }

    pub fn shard_map(&self) -> &ShardMap {
        &self.map
    }

    fn ep(&mut self) -> Result<&mut Endpoint> {
        self.ep
            .as_mut()
            .ok_or_else(|| Error::Transport("engine has been shut down".into()))
    }

    fn command_all(&mut self, make: impl Fn(usize) -> Command) -> Result<()> {
        let ep = self.ep()?;
        for w in 1..ep.size() {
            ep.send_control(WorkerId(w), Box::new(make(w)))?;
        }
        Ok(())
    }

    /// Distributed forward pass. `label` travels with the input so each
    /// worker receives its share; zeros are sent when it is absent.
    ///
    /// The returned trace holds every layer's full activation. Pre-activations
    /// of partitioned layers stay with their owners, so `pre[i]` is empty for
    /// hidden layers.
    pub fn forward(&mut self, input: &[f64], label: Option<&[f64]>) -> Result<ForwardTrace> {
        if input.len() != self.spec.input_len() {
            return Err(Error::Shape(format!(
                "input of length {} for a network expecting {}",
                input.len(),
                self.spec.input_len()
            )));
        }
        let outputs = self.spec.output_len();
        let zeros = vec![0.0; outputs];
        let label = label.unwrap_or(&zeros);
        if label.len() != outputs {
            return Err(Error::Shape(format!("label of length {} for {outputs} outputs", label.len())));
        }
        self.pass = None;
        let map = self.map.clone();
        let mode = self.config.mode;
        let ep = self.ep.as_mut().ok_or_else(|| Error::Transport("engine has been shut down".into()))?;
        for w in 1..ep.size() {
            let mut payload = input.to_vec();
            payload.extend_from_slice(&label[map.label_share(w)]);
            ep.send(WorkerId(w), Tag::InitData, 0, payload)?;
        }
        let pass = forward_pass(ep, &self.shard, &map, mode, input)?;
        let top = pass.full(map.partitioned())?;
        let out_pre = dense_pre(&self.head.weights, &self.head.bias, top)?;
        let output = self.head.act.apply(&out_pre)?;

        let n = self.spec.n();
        let mut pre = vec![Vector::default(); n];
        pre[0] = Vector::from(input);
        pre[n - 1] = Vector::from(out_pre);
        let mut act: Vec<Vector> = pass
            .full
            .iter()
            .map(|a| a.as_deref().map(Vector::from).unwrap_or_default())
            .collect();
        act.push(output.clone());
        self.pass = Some((pass, output));
        Ok(ForwardTrace { pre, act })
    }

    /// Distributed backward pass for the last forward. Accumulates weight
    /// gradients on their owners and returns the loss plus each layer's error
    /// vector as assembled at the master (`deltas[0]` is empty).
    pub fn backward(&mut self, target: &[f64], kind: LossKind) -> Result<(f64, Vec<Vector>)> {
        let (pass, output) = self
            .pass
            .take()
            .ok_or_else(|| Error::Inconsistent("backward without a matching forward pass".into()))?;
        if target.len() != output.len() {
            return Err(Error::Shape(format!(
                "target of length {} for {} outputs",
                target.len(),
                output.len()
            )));
        }
        let value = loss(kind, &output, target)?;
        let mut delta = output_delta(kind, self.head.act, &output, target)?;
        let hidden = self.map.partitioned();
        self.head.g_weights.add_outer(pass.full(hidden)?, &delta)?;
        for (g, x) in self.head.g_bias.iter_mut().zip(delta.iter()) {
            *g += x;
        }
        let n = self.spec.n();
        let mut deltas = vec![Vector::default(); n];
        deltas[n - 1] = Vector::from(delta.clone());
        let ep = self.ep.as_mut().ok_or_else(|| Error::Transport("engine has been shut down".into()))?;
        for h in (0..hidden).rev() {
            ep.broadcast(Tag::ErrorBroadcast, h + 2, &delta)?;
            let mut whole = self.shard.backward_stage(h, pass.full(h)?, &pass.mine[h], &delta)?;
            for m in ep.gather(Tag::PartialError, h + 1, ep.size() - 1)? {
                if m.payload.len() != self.map.range(h, m.sender.index()).len() {
                    return Err(Error::Shape(format!("{} sent a mis-sized error slice", m.sender)));
                }
                whole.extend_from_slice(&m.payload);
            }
            delta = whole;
            deltas[h + 1] = Vector::from(delta.clone());
        }
        Ok((value, deltas))
    }

    /// Forward and backward for one example; gradients accumulate.
    pub fn accumulate(&mut self, input: &[f64], target: &[f64], kind: LossKind) -> Result<f64> {
        self.forward(input, Some(target))?;
        Ok(self.backward(target, kind)?.0)
    }

    pub fn zero_grads(&mut self) -> Result<()> {
        self.command_all(|_| Command::ZeroGrads)?;
        self.shard.data.zero_grads();
        self.head.g_weights = DenseMatrix::zeros(self.head.weights.rows(), self.head.weights.cols());
        self.head.g_bias = Vector::zeros(self.head.bias.len());
        Ok(())
    }

    /// Every task updates its own shard with gradient `accumulated * scale`,
    /// then gradients are cleared.
    pub fn apply(&mut self, lr: f64, scale: f64) -> Result<()> {
        if !self.head.g_weights.is_finite() || !self.head.g_bias.is_finite() || !self.shard.data.grads_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        self.command_all(|_| Command::Apply { lr, scale })?;
        self.shard.apply(lr, scale)?;
        let h = &mut self.head;
        let mut params: Vec<&mut [f64]> = vec![h.weights.data_mut(), h.bias.as_mut_slice()];
        h.optimizer
            .step_slices(&mut params, &[h.g_weights.data(), h.g_bias.as_slice()], lr, scale)?;
        self.zero_grads()
    }

    /// Mini-batch step: accumulate every example, then update with the mean
    /// gradient. Returns the mean loss and the traffic this step generated.
    pub fn train_batch(&mut self, batch: &[(&[f64], &[f64])], kind: LossKind, lr: f64) -> Result<(f64, MessageStats)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let before = self.stats();
        self.zero_grads()?;
        let mut total = 0.0;
        for (x, y) in batch {
            total += self.accumulate(x, y, kind)?;
        }
        self.apply(lr, 1.0 / batch.len() as f64)?;
        Ok((total / batch.len() as f64, self.stats().since(&before)))
    }

    /// One-example training step.
    pub fn train_step(&mut self, input: &[f64], target: &[f64], kind: LossKind, lr: f64) -> Result<(f64, MessageStats)> {
        self.train_batch(&[(input, target)], kind, lr)
    }

    fn export(&mut self) -> Result<Vec<ShardData>> {
        self.command_all(|_| Command::Export)?;
        let f = self.config.workers;
        let mut got: Vec<Option<ShardData>> = vec![None; f];
        got[0] = Some(self.shard.data.clone());
        let ep = self.ep()?;
        for _ in 1..f {
            let (sender, body) = ep.recv_control()?;
            let data = body
                .downcast::<ShardData>()
                .map_err(|_| Error::Transport(format!("unexpected reply from {sender}")))?;
            got[sender.index()] = Some(*data);
        }
        got.into_iter()
            .enumerate()
            .map(|(w, d)| d.ok_or_else(|| Error::Timeout {
                waiting_on: WorkerId::MASTER,
                missing: vec![WorkerId(w)],
            }))
            .collect()
    }

    fn assemble(&self, shards: &[ShardData], grads: bool) -> Result<Parameters> {
        let hidden = self.map.partitioned();
        let mut layers = Vec::with_capacity(hidden + 1);
        for h in 0..hidden {
            let mut w = DenseMatrix::zeros(self.spec.b(h), self.spec.b(h + 1));
            let mut b = Vec::with_capacity(self.spec.b(h + 1));
            for s in shards {
                let (cols, bias) = if grads { (&s.g_col[h], &s.g_bias[h]) } else { (&s.col[h], &s.bias[h]) };
                w.set_columns(s.own[h].start, cols)?;
                b.extend_from_slice(bias);
            }
            layers.push(LayerParams::Dense {
                weights: w,
                bias: Vector::from(b),
            });
        }
        let (w, b) = if grads {
            (&self.head.g_weights, &self.head.g_bias)
        } else {
            (&self.head.weights, &self.head.bias)
        };
        layers.push(LayerParams::Dense {
            weights: w.clone(),
            bias: b.clone(),
        });
        Ok(Parameters { layers })
    }

    /// Accumulated gradients, reassembled from every shard.
    pub fn gradients(&mut self) -> Result<Parameters> {
        let shards = self.export()?;
        self.assemble(&shards, true)
    }

    /// Current parameters, reassembled from every shard.
    pub fn parameters(&mut self) -> Result<Parameters> {
        let shards = self.export()?;
        self.assemble(&shards, false)
    }

    /// Checks that every row replica matches the owning columns, for both
    /// weights and gradients.
    pub fn check_replicas(&mut self) -> Result<()> {
        let shards = self.export()?;
        let params = self.assemble(&shards, false)?;
        let grads = self.assemble(&shards, true)?;
        for (h, _) in shards[0].own.iter().enumerate() {
            let (w, _) = dense(&params.layers[h + 1])?;
            let (g, _) = dense(&grads.layers[h + 1])?;
            for (i, s) in shards.iter().enumerate() {
                let r = &s.own[h];
                if w.row_block(r.start, r.end) != s.row[h] || g.row_block(r.start, r.end) != s.g_row[h] {
                    return Err(Error::Inconsistent(format!(
                        "row replica of weight matrix {} on worker {i} diverged",
                        h + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Replaces every shard with a cut of `params` and resets optimizer state.
    pub fn load(&mut self, params: &Parameters) -> Result<()> {
        params.validate(&self.spec)?;
        let cuts: Vec<ShardData> = (0..self.config.workers)
            .map(|w| ShardData::cut(params, &self.map, w))
            .collect::<Result<_>>()?;
        let mut cuts = cuts.into_iter();
        let mine = cuts.next().expect("at least one worker");
        let ep = self.ep()?;
        for (w, data) in cuts.enumerate() {
            ep.send_control(WorkerId(w + 1), Box::new(Command::Load(Box::new(data))))?;
        }
        self.shard.data = mine;
        self.shard.optimizer = Optimizer::new(self.shard.optimizer.kind());
        let hidden = self.map.partitioned();
        let (w, b) = dense(&params.layers[hidden])?;
        self.head.weights = w.clone();
        self.head.bias = b.clone();
        self.head.optimizer = Optimizer::new(self.head.optimizer.kind());
        self.zero_grads()
    }

    /// Counted traffic since construction or the last [`MpEngine::reset_stats`].
    pub fn stats(&self) -> MessageStats {
        self.transport.stats_snapshot()
    }

    pub fn reset_stats(&self) -> MessageStats {
        self.transport.stats_reset()
    }

    /// Stops every worker and reports the first worker failure, if any.
    pub fn shutdown(mut self) -> Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> Result<()> {
        if self.ep.is_some() {
            let _ = self.command_all(|_| Command::Shutdown);
        }
        // Under the scheduler, a live endpoint outside `recv` stalls delivery.
        self.ep = None;
        let mut first = Ok(());
        for h in self.workers.drain(..) {
            let r = h
                .join()
                .map_err(|_| Error::Transport("worker thread panicked".into()))
                .and_then(|r| r);
            if first.is_ok() {
                first = r;
            }
        }
        first
    }
}

impl Drop for MpEngine {
    fn drop(&mut self) {
        if let Err(e) = self.stop() {
            log::warn!("model-parallel worker failed: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{backward, forward, init_params};
    use crate::optim::OptimizerKind;
    use crate::tensor::Rng;

    fn small() -> NetworkSpec {
        NetworkSpec::dense(&[6, 8, 4, 3], Activation::Sigmoid, Activation::Softmax).unwrap()
    }

    fn sample(rng: &mut Rng, n: usize) -> Vec<f64> {
        rng.uniform(-1.0, 1.0, n).unwrap().into_inner()
    }

    #[test]
    fn single_worker_matches_reference_bit_for_bit() {
        let spec = small();
        let mut rng = Rng::new(5);
        let params = init_params(&spec, &mut rng);
        let x = sample(&mut rng, 6);
        let y = Vector::one_hot(3, 1);
        let mut eng = MpEngine::new(&spec, &params, MpConfig::new(1, ExchangeMode::Hypercube), OptimizerKind::Sgd).unwrap();
        let tr = eng.forward(&x, Some(&y)).unwrap();
        let reference = forward(&spec, &params, &x).unwrap();
        assert_eq!(tr.act, reference.act);
        let (l, _) = eng.backward(&y, LossKind::CrossEntropy).unwrap();
        let (g, l_ref) = backward(&spec, &params, &reference, &y, LossKind::CrossEntropy).unwrap();
        assert_eq!(l, l_ref);
        assert_eq!(eng.gradients().unwrap(), g.weights);
        assert_eq!(eng.stats().message_count, 0);
    }

    #[test]
    fn partitioned_gradients_are_exact() {
        let spec = small();
        let mut rng = Rng::new(6);
        let params = init_params(&spec, &mut rng);
        let x = sample(&mut rng, 6);
        let y = Vector::one_hot(3, 2);
        let reference = forward(&spec, &params, &x).unwrap();
        let (g, _) = backward(&spec, &params, &reference, &y, LossKind::CrossEntropy).unwrap();
        for (f, mode) in [(2, ExchangeMode::Hypercube), (4, ExchangeMode::Hypercube), (3, ExchangeMode::MasterRelay)] {
            let mut eng = MpEngine::new(&spec, &params, MpConfig::new(f, mode), OptimizerKind::Sgd).unwrap();
            let tr = eng.forward(&x, Some(&y)).unwrap();
            assert_eq!(tr.act, reference.act);
            let (_, deltas) = eng.backward(&y, LossKind::CrossEntropy).unwrap();
            assert_eq!(&deltas[1..], &g.deltas[1..]);
            assert_eq!(eng.gradients().unwrap(), g.weights);
            eng.check_replicas().unwrap();
            eng.shutdown().unwrap();
        }
    }

    #[test]
    fn two_workers_one_hidden_layer_sends_five_messages() {
        let spec = NetworkSpec::dense(&[4, 2, 2], Activation::Sigmoid, Activation::Sigmoid).unwrap();
        let params = init_params(&spec, &mut Rng::new(1));
        let mut eng = MpEngine::new(&spec, &params, MpConfig::new(2, ExchangeMode::Hypercube), OptimizerKind::Sgd).unwrap();
        let (_, stats) = eng.train_step(&[1.0, 0.0, 0.5, 0.2], &[1.0, 0.0], LossKind::Mse, 0.1).unwrap();
        assert_eq!(stats.message_count, 5);
    }

    #[test]
    fn training_matches_reference_updates() {
        let spec = small();
        let mut rng = Rng::new(9);
        let mut params = init_params(&spec, &mut rng);
        let kind = OptimizerKind::Momentum { mu: 0.9 };
        let mut eng = MpEngine::new(&spec, &params, MpConfig::new(2, ExchangeMode::Hypercube).deterministic(4), kind).unwrap();
        let mut opt = Optimizer::new(kind);
        for step in 0..5 {
            let xs: Vec<Vec<f64>> = (0..3).map(|_| sample(&mut rng, 6)).collect();
            let ys: Vec<Vector> = (0..3).map(|i| Vector::one_hot(3, (i + step) % 3)).collect();
            let batch: Vec<(&[f64], &[f64])> = xs.iter().zip(&ys).map(|(x, y)| (x.as_slice(), y.as_slice())).collect();
            eng.train_batch(&batch, LossKind::CrossEntropy, 0.5).unwrap();
            let mut acc = params.zeros_like();
            for (x, y) in &batch {
                let tr = forward(&spec, &params, x).unwrap();
                let (g, _) = backward(&spec, &params, &tr, y, LossKind::CrossEntropy).unwrap();
                acc.add_assign(&g.weights).unwrap();
            }
            opt.step(&mut params, &acc, 0.5, 1.0 / 3.0).unwrap();
        }
        assert_eq!(eng.parameters().unwrap(), params);
        eng.check_replicas().unwrap();
    }

    #[test]
    fn load_resets_shards() {
        let spec = small();
        let a = init_params(&spec, &mut Rng::new(1));
        let b = init_params(&spec, &mut Rng::new(2));
        let mut eng = MpEngine::new(&spec, &a, MpConfig::new(2, ExchangeMode::MasterRelay), OptimizerKind::Sgd).unwrap();
        eng.load(&b).unwrap();
        assert_eq!(eng.parameters().unwrap(), b);
    }

    #[test]
    fn backward_needs_forward() {
        let spec = small();
        let p = init_params(&spec, &mut Rng::new(1));
        let mut eng = MpEngine::new(&spec, &p, MpConfig::new(2, ExchangeMode::Hypercube), OptimizerKind::Sgd).unwrap();
        assert!(eng.backward(&[1.0, 0.0, 0.0], LossKind::CrossEntropy).is_err());
        assert!(eng.forward(&[0.0; 5], None).is_err());
    }

    #[test]
    fn conv_nets_are_rejected() {
        let spec = NetworkSpec::mnist_cnn();
        let p = init_params(&spec, &mut Rng::new(1));
        assert!(MpEngine::new(&spec, &p, MpConfig::new(2, ExchangeMode::Hypercube), OptimizerKind::Sgd).is_err());
    }
}
