use crate::data_io::Sequence;
use crate::error::{Error, Result};
use crate::model_parallel::MpEngine;
use crate::network::{backward, forward, tbptt_step, LossKind, NetworkSpec, Parameters, DEFAULT_TRUNCATION};

/// Computes summed mini-batch gradients for a replica.
pub trait GradientEngine {
    type Example;

    /// Gradient and loss summed over `batch`, evaluated at `params`.
    fn batch_gradient(&mut self, params: &Parameters, batch: &[&Self::Example]) -> Result<(Parameters, f64)>;
}

impl<E: GradientEngine + ?Sized> GradientEngine for &mut E {
    type Example = E::Example;

    fn batch_gradient(&mut self, params: &Parameters, batch: &[&Self::Example]) -> Result<(Parameters, f64)> {
        (**self).batch_gradient(params, batch)
    }
}

/// Single-task feedforward gradients.
#[derive(Debug, Clone)]
pub struct LocalEngine {
    spec: NetworkSpec,
    loss: LossKind,
}

impl LocalEngine {
    pub fn new(spec: &NetworkSpec, loss: LossKind) -> Self {
        Self {
            spec: spec.clone(),
            loss,
        }
    }
}

impl GradientEngine for LocalEngine {
    type Example = (Vec<f64>, Vec<f64>);

    fn batch_gradient(&mut self, params: &Parameters, batch: &[&Self::Example]) -> Result<(Parameters, f64)> {
        let mut acc = params.zeros_like();
        let mut total = 0.0;
        for (x, y) in batch {
            let trace = forward(&self.spec, params, x)?;
            let (g, l) = backward(&self.spec, params, &trace, y, self.loss)?;
            acc.add_assign(&g.weights)?;
            total += l;
        }
        Ok((acc, total))
    }
}

/// Recurrent-network gradients by truncated backpropagation through time.
/// The loss is summed over active time steps.
#[derive(Debug, Clone)]
pub struct SequenceEngine {
    spec: NetworkSpec,
    truncation: usize,
}

impl SequenceEngine {
    pub fn new(spec: &NetworkSpec) -> Self {
        Self {
            spec: spec.clone(),
            truncation: DEFAULT_TRUNCATION,
        }
    }

    pub fn with_truncation(mut self, truncation: usize) -> Self {
        self.truncation = truncation;
        self
    }
}

impl GradientEngine for SequenceEngine {
    type Example = Sequence;

    fn batch_gradient(&mut self, params: &Parameters, batch: &[&Sequence]) -> Result<(Parameters, f64)> {
        let mut acc = params.zeros_like();
        let mut total = 0.0;
        for s in batch {
            let (g, l) = tbptt_step(&self.spec, params, &s.inputs, &s.targets, &s.mask, self.truncation)?;
            acc.add_assign(&g.weights)?;
            total += l;
        }
        Ok((acc, total))
    }
}

/// A model-parallel group acting as one data-parallel replica.
pub struct MpReplica {
    engine: MpEngine,
    loss: LossKind,
}

impl MpReplica {
    pub fn new(engine: MpEngine, loss: LossKind) -> Self {
        Self { engine, loss }
    }

    pub fn engine(&self) -> &MpEngine {
        &self.engine
    }

    pub fn into_inner(self) -> MpEngine {
        self.engine
    }
}

impl GradientEngine for MpReplica {
    type Example = (Vec<f64>, Vec<f64>);

    fn batch_gradient(&mut self, params: &Parameters, batch: &[&Self::Example]) -> Result<(Parameters, f64)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        self.engine.load(params)?;
        let mut total = 0.0;
        for (x, y) in batch {
            total += self.engine.accumulate(x, y, self.loss)?;
        }
        let g = self.engine.gradients()?;
        self.engine.zero_grads()?;
        Ok((g, total))
    }
}
