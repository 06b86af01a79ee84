//! Elementwise update rules shared by the parameter server, the
//! model-parallel workers and single-machine training.

use crate::error::{Error, Result};
use crate::network::Parameters;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    /// `v = mu * v + g; w -= lr * v`
    Momentum { mu: f64 },
    /// `s = rho * s + (1 - rho) * g^2; w -= lr * g / (sqrt(s) + eps)`
    RmsProp { rho: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            batch_size: 1,
        }
    }

    pub fn momentum(learning_rate: f64, mu: f64) -> Self {
        Self {
            kind: OptimizerKind::Momentum { mu },
            learning_rate,
            batch_size: 16,
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::RmsProp { rho: 0.9, eps: 1e-8 },
            learning_rate,
            batch_size: 32,
        }
    }

    pub fn with_batch(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        match self.kind {
            OptimizerKind::Sgd => Ok(()),
            OptimizerKind::Momentum { mu } if (0.0..1.0).contains(&mu) => Ok(()),
            OptimizerKind::RmsProp { rho, eps } if rho > 0.0 && rho < 1.0 && eps > 0.0 => Ok(()),
            kind => Err(Error::Config(format!("invalid optimizer settings {kind:?}"))),
        }
    }
}

/// Update rule plus its per-element state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    state: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            state: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Applies one update with gradient `grads * scale` to each block.
    pub fn step_slices(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        lr: f64,
        scale: f64,
    ) -> Result<()> {
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.len() != g.len())
        {
            return Err(Error::Shape("gradient blocks do not match parameters".into()));
        }
        if self.state.is_empty() && !matches!(self.kind, OptimizerKind::Sgd) {
            self.state = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (b, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &gi) in p.iter_mut().zip(g.iter()) {
                        *w -= lr * (gi * scale);
                    }
                }
                OptimizerKind::Momentum { mu } => {
                    for ((w, &gi), v) in p.iter_mut().zip(g.iter()).zip(self.state[b].iter_mut()) {
                        *v = mu * *v + gi * scale;
                        *w -= lr * *v;
                    }
                }
                OptimizerKind::RmsProp { rho, eps } => {
                    for ((w, &gi), s) in p.iter_mut().zip(g.iter()).zip(self.state[b].iter_mut()) {
                        let g = gi * scale;
                        *s = rho * *s + (1.0 - rho) * g * g;
                        *w -= lr * g / (s.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters, lr: f64, scale: f64) -> Result<()> {
        let g = grads.slices();
        let mut p = params.slices_mut();
        self.step_slices(&mut p, &g, lr, scale)
    }

    /// Optimizer state, one buffer per parameter block.
    pub fn state(&self) -> &[Vec<f64>] {
        &self.state
    }
}
