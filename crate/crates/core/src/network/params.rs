use crate::error::{Error, Result};
use crate::network::spec::{LayerSpec, NetworkSpec};
use crate::tensor::{DenseMatrix, Rng, Vector};

/// Weights of one recurrent gate (or of a plain recurrent cell).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub input: DenseMatrix,
    pub recurrent: DenseMatrix,
    pub bias: Vector,
}

/// Gate order inside [`LayerParams::Lstm`].
pub const LSTM_INPUT: usize = 0;
pub const LSTM_FORGET: usize = 1;
pub const LSTM_OUTPUT: usize = 2;
pub const LSTM_CANDIDATE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    /// Pooling layers carry no weights.
    None,
    /// `weights` is `inputs x outputs`.
    Dense { weights: DenseMatrix, bias: Vector },
    /// `kernels` is `maps x (channels * kernel_h * kernel_w)`.
    Conv { kernels: DenseMatrix, bias: Vector },
    Rnn(GateParams),
    Lstm(Box<[GateParams; 4]>),
}

impl LayerParams {
    fn slices(&self) -> Vec<&[f64]> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Dense { weights, bias } => vec![weights.data(), bias],
            LayerParams::Conv { kernels, bias } => vec![kernels.data(), bias],
            LayerParams::Rnn(g) => vec![g.input.data(), g.recurrent.data(), &g.bias],
            LayerParams::Lstm(gates) => gates
                .iter()
                .flat_map(|g| [g.input.data(), g.recurrent.data(), g.bias.as_slice()])
                .collect(),
        }
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Dense { weights, bias } => vec![weights.data_mut(), bias],
            LayerParams::Conv { kernels, bias } => vec![kernels.data_mut(), bias],
            LayerParams::Rnn(g) => vec![g.input.data_mut(), g.recurrent.data_mut(), &mut g.bias],
            LayerParams::Lstm(gates) => gates
                .iter_mut()
                .flat_map(|g| {
                    [
                        g.input.data_mut(),
                        g.recurrent.data_mut(),
                        g.bias.as_mut_slice(),
                    ]
                })
                .collect(),
        }
    }
}

/// Weights and biases for every layer of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> DenseMatrix {
    let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = rng
        .uniform(-r, r, rows * cols)
        .expect("glorot range is non-empty")
        .into_inner();
    DenseMatrix::from_vec(rows, cols, data).expect("sized above")
}

fn gate(rng: &mut Rng, inputs: usize, hidden: usize) -> GateParams {
    GateParams {
        input: glorot(rng, inputs, hidden, inputs, hidden),
        recurrent: glorot(rng, hidden, hidden, hidden, hidden),
        bias: Vector::zeros(hidden),
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(spec: &NetworkSpec, rng: &mut Rng) -> Parameters {
    let layers = spec
        .layers()
        .iter()
        .enumerate()
        .map(|(k, layer)| {
            let input = spec.shape(k);
            let output = spec.b(k + 1);
            match *layer {
                LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. } => LayerParams::Dense {
                    weights: glorot(rng, input.len(), output, input.len(), output),
                    bias: Vector::zeros(output),
                },
                LayerSpec::Conv2D {
                    kernel_h,
                    kernel_w,
                    maps,
                    ..
                } => {
                    let area = kernel_h * kernel_w;
                    LayerParams::Conv {
                        kernels: glorot(rng, maps, input.channels * area, input.channels * area, maps * area),
                        bias: Vector::zeros(maps),
                    }
                }
                LayerSpec::MeanPool { .. } => LayerParams::None,
                LayerSpec::RnnCell { hidden } => LayerParams::Rnn(gate(rng, input.len(), hidden)),
                LayerSpec::LstmCell { hidden } => LayerParams::Lstm(Box::new([
                    gate(rng, input.len(), hidden),
                    gate(rng, input.len(), hidden),
                    gate(rng, input.len(), hidden),
                    gate(rng, input.len(), hidden),
                ])),
            }
        })
        .collect();
    Parameters { layers }
}

impl Parameters {
    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for s in z.slices_mut() {
            s.fill(0.0);
        }
        z
    }

    /// Every parameter block in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(LayerParams::slices).collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(LayerParams::slices_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Overwrites all values from a flat buffer produced by [`Parameters::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        let (a, b) = (self.slices(), other.slices());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len() == y.len())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Parameters) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("parameter sets differ in shape".into()));
        }
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for x in s.iter_mut() {
                *x *= factor;
            }
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Parameters) -> f64 {
        self.slices()
            .iter()
            .zip(other.slices())
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Checks that the parameter blocks match what `spec` requires.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let template = init_params(spec, &mut Rng::new(0));
        if self.layers.len() != template.layers.len() || !self.same_shape(&template) {
            return Err(Error::Shape("parameters do not match the network layout".into()));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }
}

/// Parameter-shaped gradients plus the error vector recorded at each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Parameters,
    /// `deltas[j]` is dE/d(pre-activation) of layer `j`; empty for the input layer.
    pub deltas: Vec<Vector>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Activation;

    #[test]
    fn glorot_bound_and_zero_bias() {
        let spec = NetworkSpec::dense(&[784, 480], Activation::Sigmoid, Activation::Sigmoid).unwrap();
        let p = init_params(&spec, &mut Rng::new(3));
        let bound = (6.0f64 / 1264.0).sqrt();
        assert!((bound - 0.06890).abs() < 1e-5);
        match &p.layers[0] {
            LayerParams::Dense { weights, bias } => {
                assert!(weights.data().iter().all(|w| w.abs() <= bound));
                assert!(bias.iter().all(|&b| b == 0.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn init_is_deterministic_for_every_kind() {
        for spec in [
            NetworkSpec::mnist_cnn(),
            NetworkSpec::char_model(7, &[5, 4], true).unwrap(),
            NetworkSpec::char_model(7, &[5], false).unwrap(),
        ] {
            let a = init_params(&spec, &mut Rng::new(11));
            let b = init_params(&spec, &mut Rng::new(11));
            assert_eq!(a, b);
            a.validate(&spec).unwrap();
        }
    }

    #[test]
    fn flat_round_trip() {
        let spec = NetworkSpec::char_model(4, &[3], true).unwrap();
        let p = init_params(&spec, &mut Rng::new(1));
        let mut q = p.zeros_like();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
        assert_eq!(p.num_params(), 4 * (4 * 3 + 3 * 3 + 3) + 3 * 4 + 4);
    }
}
