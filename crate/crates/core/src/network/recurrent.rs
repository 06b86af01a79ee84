//! Recurrent cells unrolled over time, truncated BPTT and sampling.
//!
//! A masked time step is skipped entirely: recurrent state passes through
//! unchanged, nothing is emitted, and neither loss nor gradient is produced.

use crate::error::{Error, Result};
use crate::network::feedforward::{dense_parts, dense_pre, kind_name};
use crate::network::loss::{loss, output_delta, LossKind};
use crate::network::params::{
    GateParams, Gradients, LayerParams, Parameters, LSTM_CANDIDATE, LSTM_FORGET, LSTM_INPUT,
    LSTM_OUTPUT,
};
use crate::network::spec::{LayerSpec, NetworkSpec};
use crate::tensor::{Activation, Rng, Vector};

/// Default truncation window for tBPTT.
pub const DEFAULT_TRUNCATION: usize = 25;

/// Per-step validity indicator for padded sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask(Vec<u8>);

impl Mask {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Range("mask entries must be 0 or 1".into()));
        }
        Ok(Self(bits))
    }

    pub fn ones(len: usize) -> Self {
        Self(vec![1; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_active(&self, t: usize) -> bool {
        self.0[t] == 1
    }

    pub fn active_count(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }
}

/// Cached quantities of one layer at one time step.
#[derive(Debug, Clone, PartialEq)]
pub enum CellTrace {
    Feedforward {
        pre: Vector,
        act: Vector,
    },
    Rnn {
        h_prev: Vector,
        h: Vector,
    },
    Lstm {
        h_prev: Vector,
        c_prev: Vector,
        /// Input, forget, output gate activations and the candidate.
        gates: [Vector; 4],
        c: Vector,
        tanh_c: Vector,
        h: Vector,
    },
}

impl CellTrace {
    pub fn output(&self) -> &Vector {
        match self {
            CellTrace::Feedforward { act, .. } => act,
            CellTrace::Rnn { h, .. } | CellTrace::Lstm { h, .. } => h,
        }
    }
}

/// One time step: the input and every layer's cache, or `None` when masked.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub input: Vector,
    pub cells: Vec<CellTrace>,
}

impl StepTrace {
    /// Activation of the last layer.
    pub fn output(&self) -> &Vector {
        self.cells.last().map(CellTrace::output).unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTrace {
    pub steps: Vec<Option<StepTrace>>,
}

/// Hidden (and cell) state of every recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    h: Vec<Vector>,
    c: Vec<Vector>,
}

impl RecurrentState {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        let sizes: Vec<usize> = (1..spec.n()).map(|i| spec.b(i)).collect();
        Self {
            h: sizes.iter().map(|&s| Vector::zeros(s)).collect(),
            c: sizes.iter().map(|&s| Vector::zeros(s)).collect(),
        }
    }

    pub fn hidden(&self, layer: usize) -> &Vector {
        &self.h[layer]
    }

    pub fn cell(&self, layer: usize) -> &Vector {
        &self.c[layer]
    }
}

fn gate_pre(g: &GateParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    let from_input = g.input.vec_mul(x)?;
    let from_state = g.recurrent.vec_mul(h_prev)?;
    Ok(from_input
        .iter()
        .zip(&from_state)
        .zip(g.bias.iter())
        .map(|((a, b), c)| a + b + c)
        .collect())
}

fn check_recurrent(spec: &NetworkSpec, params: &Parameters) -> Result<()> {
    if !spec.is_recurrent() {
        return Err(Error::Config("network has no recurrent layers".into()));
    }
    if spec.layers().len() != params.layers.len() {
        return Err(Error::Shape("parameters do not match the network layout".into()));
    }
    Ok(())
}

/// Advances every layer by one step, updating `state` in place.
pub fn step_forward(
    spec: &NetworkSpec,
    params: &Parameters,
    state: &mut RecurrentState,
    input: &[f64],
) -> Result<StepTrace> {
    if input.len() != spec.input_len() {
        return Err(Error::Shape(format!(
            "input of length {} for {} inputs",
            input.len(),
            spec.input_len()
        )));
    }
    let mut cells = Vec::with_capacity(spec.layers().len());
    let mut x = Vector::from(input);
    for (k, (layer, p)) in spec.layers().iter().zip(&params.layers).enumerate() {
        let cell = match (layer, p) {
            (LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. }, _) => {
                let (w, b) = dense_parts(p)?;
                let pre = dense_pre(w, b, &x)?;
                let act = layer.activation().apply(&pre)?;
                CellTrace::Feedforward {
                    pre: pre.into(),
                    act,
                }
            }
            (LayerSpec::RnnCell { .. }, LayerParams::Rnn(g)) => {
                let h_prev = state.h[k].clone();
                let h = Activation::Tanh.apply(&gate_pre(g, &x, &h_prev)?)?;
                state.h[k] = h.clone();
                CellTrace::Rnn { h_prev, h }
            }
            (LayerSpec::LstmCell { .. }, LayerParams::Lstm(gates)) => {
                let h_prev = state.h[k].clone();
                let c_prev = state.c[k].clone();
                let mut acts: [Vector; 4] = Default::default();
                for (idx, g) in gates.iter().enumerate() {
                    let pre = gate_pre(g, &x, &h_prev)?;
                    acts[idx] = if idx == LSTM_CANDIDATE {
                        Activation::Tanh.apply(&pre)?
                    } else {
                        Activation::Sigmoid.apply(&pre)?
                    };
                }
                let c: Vector = (0..c_prev.len())
                    .map(|j| {
                        acts[LSTM_FORGET][j] * c_prev[j]
                            + acts[LSTM_INPUT][j] * acts[LSTM_CANDIDATE][j]
                    })
                    .collect();
                let tanh_c: Vector = c.iter().map(|v| v.tanh()).collect();
                let h: Vector = (0..c.len()).map(|j| acts[LSTM_OUTPUT][j] * tanh_c[j]).collect();
                if !c.is_finite() {
                    return Err(Error::NonFinite("LSTM cell state"));
                }
                state.h[k] = h.clone();
                state.c[k] = c.clone();
                CellTrace::Lstm {
                    h_prev,
                    c_prev,
                    gates: acts,
                    c,
                    tanh_c,
                    h,
                }
            }
            (_, p) => {
                return Err(Error::Shape(format!("layer {k} cannot use {}", kind_name(p))));
            }
        };
        x = cell.output().clone();
        cells.push(cell);
    }
    Ok(StepTrace {
        input: Vector::from(input),
        cells,
    })
}

pub fn forward_sequence(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[Vector],
    mask: &Mask,
) -> Result<SequenceTrace> {
    check_recurrent(spec, params)?;
    if inputs.len() != mask.len() {
        return Err(Error::Shape(format!(
            "{} inputs with a mask of length {}",
            inputs.len(),
            mask.len()
        )));
    }
    let mut state = RecurrentState::zeros(spec);
    let steps = inputs
        .iter()
        .enumerate()
        .map(|(t, x)| {
            if mask.is_active(t) {
                step_forward(spec, params, &mut state, x).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    Ok(SequenceTrace { steps })
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn gate_grad(
    grad: &mut GateParams,
    weights: &GateParams,
    x: &[f64],
    h_prev: &[f64],
    dz: &[f64],
    dx: &mut [f64],
    dh_prev: &mut [f64],
) -> Result<()> {
    grad.input.add_outer(x, dz)?;
    grad.recurrent.add_outer(h_prev, dz)?;
    add_into(&mut grad.bias, dz);
    add_into(dx, &weights.input.mul_vec(dz)?);
    add_into(dh_prev, &weights.recurrent.mul_vec(dz)?);
    Ok(())
}

/// Truncated backpropagation through time over one sequence.
///
/// The sequence is cut into windows of `truncation` steps; state flows
/// forward across windows but gradients do not flow back across them.
/// Returns the gradient of the summed masked loss and that loss.
pub fn tbptt_step(
    spec: &NetworkSpec,
    params: &Parameters,
    inputs: &[Vector],
    targets: &[Vector],
    mask: &Mask,
    truncation: usize,
) -> Result<(Gradients, f64)> {
    if inputs.len() != targets.len() || inputs.len() != mask.len() {
        return Err(Error::Shape(format!(
            "sequence lengths differ: {} inputs, {} targets, {} mask entries",
            inputs.len(),
            targets.len(),
            mask.len()
        )));
    }
    if truncation == 0 {
        return Err(Error::Config("truncation must be at least 1".into()));
    }
    let trace = forward_sequence(spec, params, inputs, mask)?;
    let layers = spec.layers();
    let top = layers.len() - 1;
    let out_act = layers[top].activation();

    let mut grads = params.zeros_like();
    let mut total = 0.0;
    let mut dh_next: Vec<Vec<f64>> = (1..spec.n()).map(|i| vec![0.0; spec.b(i)]).collect();
    let mut dc_next = dh_next.clone();
    let mut last_delta = vec![Vector::default(); spec.n()];

    for t in (0..inputs.len()).rev() {
        if let Some(step) = &trace.steps[t] {
            let out = step.cells[top].output();
            if targets[t].len() != out.len() {
                return Err(Error::Shape("target length differs from output size".into()));
            }
            total += loss(LossKind::CrossEntropy, out, &targets[t])?;
            // dE/d(output of layer k); the top layer starts from its pre-activation delta.
            let mut grad_out: Vec<f64> = Vec::new();
            for k in (0..=top).rev() {
                let x: &[f64] = if k == 0 { &step.input } else { step.cells[k - 1].output() };
                let mut dx = vec![0.0; x.len()];
                match (&step.cells[k], &params.layers[k], &mut grads.layers[k]) {
                    (
                        CellTrace::Feedforward { act, .. },
                        LayerParams::Dense { weights, .. },
                        LayerParams::Dense {
                            weights: gw,
                            bias: gb,
                        },
                    ) => {
                        let delta = if k == top {
                            output_delta(LossKind::CrossEntropy, out_act, act, &targets[t])?
                        } else {
                            layers[k].activation().backprop(act, &grad_out)
                        };
                        gw.add_outer(x, &delta)?;
                        add_into(gb, &delta);
                        dx = weights.mul_vec(&delta)?;
                        last_delta[k + 1] = delta.into();
                    }
                    (CellTrace::Rnn { h_prev, h }, LayerParams::Rnn(w), LayerParams::Rnn(g)) => {
                        let dh: Vec<f64> = grad_out.iter().zip(&dh_next[k]).map(|(a, b)| a + b).collect();
                        let dz: Vec<f64> = dh.iter().zip(h.iter()).map(|(d, h)| d * (1.0 - h * h)).collect();
                        let mut dh_prev = vec![0.0; h.len()];
                        gate_grad(g, w, x, h_prev, &dz, &mut dx, &mut dh_prev)?;
                        dh_next[k] = dh_prev;
                        last_delta[k + 1] = dz.into();
                    }
                    (
                        CellTrace::Lstm {
                            h_prev,
                            c_prev,
                            gates,
                            tanh_c,
                            ..
                        },
                        LayerParams::Lstm(w),
                        LayerParams::Lstm(g),
                    ) => {
                        let hidden = h_prev.len();
                        let (ig, fg, og, cand) = (
                            &gates[LSTM_INPUT],
                            &gates[LSTM_FORGET],
                            &gates[LSTM_OUTPUT],
                            &gates[LSTM_CANDIDATE],
                        );
                        let mut dz: [Vec<f64>; 4] = Default::default();
                        for d in dz.iter_mut() {
                            *d = vec![0.0; hidden];
                        }
                        let mut dc_prev = vec![0.0; hidden];
                        for j in 0..hidden {
                            let dh = grad_out[j] + dh_next[k][j];
                            let d_o = dh * tanh_c[j];
                            let dc = dc_next[k][j] + dh * og[j] * (1.0 - tanh_c[j] * tanh_c[j]);
                            dz[LSTM_INPUT][j] = dc * cand[j] * ig[j] * (1.0 - ig[j]);
                            dz[LSTM_FORGET][j] = dc * c_prev[j] * fg[j] * (1.0 - fg[j]);
                            dz[LSTM_OUTPUT][j] = d_o * og[j] * (1.0 - og[j]);
                            dz[LSTM_CANDIDATE][j] = dc * ig[j] * (1.0 - cand[j] * cand[j]);
                            dc_prev[j] = dc * fg[j];
                        }
                        let mut dh_prev = vec![0.0; hidden];
                        for idx in 0..4 {
                            gate_grad(&mut g[idx], &w[idx], x, h_prev, &dz[idx], &mut dx, &mut dh_prev)?;
                        }
                        dh_next[k] = dh_prev;
                        dc_next[k] = dc_prev;
                        last_delta[k + 1] = dz[LSTM_CANDIDATE].clone().into();
                    }
                    (_, p, _) => {
                        return Err(Error::Shape(format!("layer {k} cannot use {}", kind_name(p))));
                    }
                }
                grad_out = dx;
            }
        }
        if t % truncation == 0 {
            for v in dh_next.iter_mut().chain(dc_next.iter_mut()) {
                v.fill(0.0);
            }
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok((
        Gradients {
            weights: grads,
            deltas: last_delta,
        },
        total,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Greedy,
    Stochastic,
}

/// Emits `length` indices, feeding each one back as the next input.
pub fn sample_sequence(
    spec: &NetworkSpec,
    params: &Parameters,
    seed_char: usize,
    length: usize,
    rng: &mut Rng,
    mode: SampleMode,
) -> Result<Vec<usize>> {
    check_recurrent(spec, params)?;
    params.validate(spec)?;
    let vocab = spec.output_len();
    if spec.input_len() != vocab {
        return Err(Error::Config("sampling needs matching input and output vocabularies".into()));
    }
    if seed_char >= vocab || length == 0 {
        return Err(Error::Range(format!(
            "seed index {seed_char} with vocabulary {vocab} and length {length}"
        )));
    }
    let mut state = RecurrentState::zeros(spec);
    let mut current = seed_char;
    let mut out = Vec::with_capacity(length);
    for _ in 0..length {
        let step = step_forward(spec, params, &mut state, &Vector::one_hot(vocab, current))?;
        let probs = step.cells.last().expect("non-empty").output();
        current = match mode {
            SampleMode::Greedy => probs.argmax(),
            SampleMode::Stochastic => {
                let u = rng.unit() * probs.sum();
                let mut acc = 0.0;
                let mut pick = vocab - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
        };
        out.push(current);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::params::init_params;

    fn one_hots(vocab: usize, idx: &[usize]) -> Vec<Vector> {
        idx.iter().map(|&i| Vector::one_hot(vocab, i)).collect()
    }

    fn toy(lstm: bool) -> (NetworkSpec, Parameters) {
        let spec = NetworkSpec::char_model(4, &[3, 2], lstm).unwrap();
        let params = init_params(&spec, &mut Rng::new(17));
        (spec, params)
    }

    #[test]
    fn empty_mask_means_nothing_to_learn() {
        for lstm in [false, true] {
            let (spec, params) = toy(lstm);
            let xs = one_hots(4, &[0, 1, 2]);
            let ys = one_hots(4, &[1, 2, 3]);
            let (g, l) = tbptt_step(&spec, &params, &xs, &ys, &Mask::zeros(3), 25).unwrap();
            assert_eq!(l, 0.0);
            assert_eq!(g.weights.max_abs(), 0.0);
        }
    }

    #[test]
    fn padded_tail_contributes_nothing() {
        let (spec, params) = toy(true);
        let xs = one_hots(4, &[0, 1, 2, 3, 3]);
        let ys = one_hots(4, &[1, 2, 3, 0, 0]);
        let mask = Mask::new(vec![1, 1, 1, 0, 0]).unwrap();
        let full = tbptt_step(&spec, &params, &xs, &ys, &mask, 25).unwrap();
        let short = tbptt_step(&spec, &params, &xs[..3], &ys[..3], &Mask::ones(3), 25).unwrap();
        assert_eq!(full.1, short.1);
        assert_eq!(full.0.weights, short.0.weights);
    }

    #[test]
    fn masked_input_is_ignored() {
        let (spec, params) = toy(true);
        let mask = Mask::new(vec![1, 0, 1]).unwrap();
        let ys = one_hots(4, &[1, 2, 3]);
        let a = tbptt_step(&spec, &params, &one_hots(4, &[0, 1, 2]), &ys, &mask, 25).unwrap();
        let b = tbptt_step(&spec, &params, &one_hots(4, &[0, 3, 2]), &ys, &mask, 25).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0.weights, b.0.weights);
    }

    #[test]
    fn length_mismatch_and_zero_truncation() {
        let (spec, params) = toy(false);
        let xs = one_hots(4, &[0, 1]);
        assert!(tbptt_step(&spec, &params, &xs, &one_hots(4, &[1]), &Mask::ones(2), 5).is_err());
        assert!(tbptt_step(&spec, &params, &xs, &xs, &Mask::ones(2), 0).is_err());
    }

    #[test]
    fn truncation_cuts_gradient_flow() {
        let (spec, params) = toy(false);
        let xs = one_hots(4, &[0, 1, 2, 3, 0, 1]);
        let ys = one_hots(4, &[1, 2, 3, 0, 1, 2]);
        let full = tbptt_step(&spec, &params, &xs, &ys, &Mask::ones(6), 6).unwrap();
        let long = tbptt_step(&spec, &params, &xs, &ys, &Mask::ones(6), 100).unwrap();
        let cut = tbptt_step(&spec, &params, &xs, &ys, &Mask::ones(6), 2).unwrap();
        assert_eq!(full.0.weights, long.0.weights);
        assert_eq!(full.1, cut.1);
        assert!(full.0.weights.max_abs_diff(&cut.0.weights) > 0.0);
    }

    #[test]
    fn lstm_gates_are_open_interval_and_state_stays_finite() {
        let (spec, params) = toy(true);
        let mut rng = Rng::new(4);
        let mut state = RecurrentState::zeros(&spec);
        for _ in 0..100 {
            let x = rng.uniform(-1.0, 1.0, 4).unwrap();
            let step = step_forward(&spec, &params, &mut state, &x).unwrap();
            for cell in &step.cells {
                if let CellTrace::Lstm { gates, c, .. } = cell {
                    for g in &gates[..3] {
                        assert!(g.iter().all(|&v| v > 0.0 && v < 1.0));
                    }
                    assert!(c.is_finite());
                }
            }
        }
    }

    #[test]
    fn sampling_contract() {
        let (spec, params) = toy(true);
        let a = sample_sequence(&spec, &params, 1, 300, &mut Rng::new(1), SampleMode::Greedy).unwrap();
        let b = sample_sequence(&spec, &params, 1, 300, &mut Rng::new(2), SampleMode::Greedy).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a, b);
        let s = sample_sequence(&spec, &params, 0, 300, &mut Rng::new(5), SampleMode::Stochastic).unwrap();
        assert!(s.iter().all(|&i| i < 4));
        let bad = params.zeros_like();
        let (other, _) = toy(false);
        assert!(sample_sequence(&other, &bad, 0, 10, &mut Rng::new(0), SampleMode::Greedy).is_err());
        assert!(sample_sequence(&spec, &params, 9, 10, &mut Rng::new(0), SampleMode::Greedy).is_err());
    }
}
