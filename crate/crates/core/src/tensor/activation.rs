use crate::error::{Error, Result};
use crate::tensor::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Softmax,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &[f64]) -> Result<Vector> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("activation input"));
        }
        Ok(match self {
            Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => x.iter().map(|v| v.tanh()).collect(),
            Activation::Identity => Vector::from(x),
            Activation::Softmax => {
                if x.is_empty() {
                    return Err(Error::Shape("softmax of an empty vector".into()));
                }
                let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / total).collect()
            }
        })
    }

    /// Elementwise derivative expressed through the activation output.
    /// `None` for softmax, whose Jacobian is not diagonal.
    pub fn derivative_from_output(self, a: f64) -> Option<f64> {
        match self {
            Activation::Sigmoid => Some(a * (1.0 - a)),
            Activation::Tanh => Some(1.0 - a * a),
            Activation::Identity => Some(1.0),
            Activation::Softmax => None,
        }
    }

    /// Maps `dE/da` to `dE/d(pre-activation)` given the activation output `a`.
    pub fn backprop(self, a: &[f64], grad_out: &[f64]) -> Vec<f64> {
        match self {
            Activation::Softmax => {
                let inner: f64 = a.iter().zip(grad_out).map(|(p, g)| p * g).sum();
                a.iter().zip(grad_out).map(|(p, g)| p * (g - inner)).collect()
            }
            _ => a
                .iter()
                .zip(grad_out)
                .map(|(&p, g)| g * self.derivative_from_output(p).unwrap_or(1.0))
                .collect(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation_apply(kind: Activation, x: &Vector) -> Result<Vector> {
    kind.apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_cases() {
        assert_eq!(Activation::Sigmoid.apply(&[0.0]).unwrap()[0], 0.5);
        let s3 = Activation::Sigmoid.apply(&[3.0]).unwrap()[0];
        assert!((s3 - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
        assert!((s3 - 0.952_574_126_822_433_4).abs() < 1e-15);
        assert_eq!(Activation::Softmax.apply(&[0.0, 0.0]).unwrap().as_slice(), &[0.5, 0.5]);
        assert_eq!(Activation::Identity.apply(&[-2.5]).unwrap()[0], -2.5);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Activation::Tanh.apply(&[f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Activation::Softmax.apply(&[]).is_err());
    }

    #[test]
    fn softmax_backprop_matches_explicit_jacobian() {
        let a = Activation::Softmax.apply(&[0.3, -1.2, 2.0]).unwrap();
        let g = [0.5, -0.25, 1.5];
        let fast = Activation::Softmax.backprop(&a, &g);
        for i in 0..3 {
            let explicit: f64 = (0..3)
                .map(|k| {
                    let jac = if i == k { a[i] * (1.0 - a[i]) } else { -a[i] * a[k] };
                    jac * g[k]
                })
                .sum();
            assert!((fast[i] - explicit).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn sigmoid_derivative_identity(x in -30.0f64..30.0) {
            let s = sigmoid(x);
            prop_assert_eq!(Activation::Sigmoid.derivative_from_output(s).unwrap(), s * (1.0 - s));
        }

        #[test]
        fn softmax_sums_to_one(xs in proptest::collection::vec(-50.0f64..50.0, 1..40)) {
            let p = Activation::Softmax.apply(&xs).unwrap();
            prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
        }
    }
}
