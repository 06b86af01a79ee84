use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Smallest probability fed to `ln` in cross-entropy.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `0.5 * sum (o - t)^2`
    Mse,
    /// `-sum t * ln o`
    CrossEntropy,
}

pub fn loss(kind: LossKind, output: &[f64], target: &[f64]) -> Result<f64> {
    if output.len() != target.len() {
        return Err(Error::Shape(format!(
            "output of length {} against target of length {}",
            output.len(),
            target.len()
        )));
    }
    Ok(match kind {
        LossKind::Mse => 0.5 * output.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum::<f64>(),
        LossKind::CrossEntropy => {
            if output.iter().any(|&o| o < 0.0) {
                return Err(Error::Range("cross-entropy needs non-negative outputs".into()));
            }
            -output
                .iter()
                .zip(target)
                .map(|(o, t)| if *t == 0.0 { 0.0 } else { t * o.max(LOG_FLOOR).ln() })
                .sum::<f64>()
        }
    })
}

/// dE/d(pre-activation) of the output layer.
pub fn output_delta(
    kind: LossKind,
    activation: Activation,
    output: &[f64],
    target: &[f64],
) -> Result<Vec<f64>> {
    if output.len() != target.len() {
        return Err(Error::Shape(format!(
            "output of length {} against target of length {}",
            output.len(),
            target.len()
        )));
    }
    Ok(match (kind, activation) {
        // Softmax Jacobian applied to -t/o collapses to o * sum(t) - t.
        (LossKind::CrossEntropy, Activation::Softmax) => {
            let mass: f64 = target.iter().sum();
            output.iter().zip(target).map(|(o, t)| o * mass - t).collect()
        }
        (LossKind::Mse, act) => {
            let g: Vec<f64> = output.iter().zip(target).map(|(o, t)| o - t).collect();
            act.backprop(output, &g)
        }
        (LossKind::CrossEntropy, act) => {
            let g: Vec<f64> = output
                .iter()
                .zip(target)
                .map(|(o, t)| -t / o.max(LOG_FLOOR))
                .collect();
            act.backprop(output, &g)
        }
    })
}
