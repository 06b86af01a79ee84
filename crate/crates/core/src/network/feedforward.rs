//! Single-machine forward and backward passes for non-recurrent nets.
//! These are the reference the distributed engine is checked against.

use crate::error::{Error, Result};
use crate::network::loss::{loss, output_delta, LossKind};
use crate::network::params::{Gradients, LayerParams, Parameters};
use crate::network::spec::{LayerSpec, NetworkSpec, Shape};
use crate::tensor::{Activation, DenseMatrix, Vector};

/// Per-layer pre-activations and activations. Index 0 is the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre: Vec<Vector>,
    pub act: Vec<Vector>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Vector {
        self.act.last().expect("trace always holds the input layer")
    }
}

/// `x^T W + b` for a dense layer stored `inputs x outputs`.
pub fn dense_pre(weights: &DenseMatrix, bias: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let mut pre = weights.vec_mul(input)?;
    for (p, b) in pre.iter_mut().zip(bias) {
        *p += b;
    }
    Ok(pre)
}

pub(crate) fn dense_parts(p: &LayerParams) -> Result<(&DenseMatrix, &Vector)> {
    match p {
        LayerParams::Dense { weights, bias } => Ok((weights, bias)),
        other => Err(Error::Shape(format!("expected dense weights, found {}", kind_name(other)))),
    }
}

pub(crate) fn kind_name(p: &LayerParams) -> &'static str {
    match p {
        LayerParams::None => "no weights",
        LayerParams::Dense { .. } => "dense weights",
        LayerParams::Conv { .. } => "convolution kernels",
        LayerParams::Rnn(_) => "recurrent weights",
        LayerParams::Lstm(_) => "LSTM gates",
    }
}

fn check_layers(spec: &NetworkSpec, params: &Parameters) -> Result<()> {
    if spec.layers().len() != params.layers.len() {
        return Err(Error::Shape(format!(
            "{} parameter blocks for {} layers",
            params.layers.len(),
            spec.layers().len()
        )));
    }
    Ok(())
}

fn conv_parts(p: &LayerParams) -> Result<(&DenseMatrix, &Vector)> {
    match p {
        LayerParams::Conv { kernels, bias } => Ok((kernels, bias)),
        other => Err(Error::Shape(format!("expected convolution kernels, found {}", kind_name(other)))),
    }
}

fn conv_forward(
    kernels: &DenseMatrix,
    bias: &[f64],
    input: &[f64],
    in_shape: Shape,
    out_shape: Shape,
    kh: usize,
    kw: usize,
) -> Result<Vec<f64>> {
    let (c_in, h, w) = (in_shape.channels, in_shape.height, in_shape.width);
    let (maps, oh, ow) = (out_shape.channels, out_shape.height, out_shape.width);
    if kernels.shape() != (maps, c_in * kh * kw) || input.len() != in_shape.len() {
        return Err(Error::Shape("convolution kernels do not match the layer".into()));
    }
    let mut out = vec![0.0; out_shape.len()];
    for m in 0..maps {
        let k = kernels.row(m);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for c in 0..c_in {
                    for ky in 0..kh {
                        let row = &input[c * h * w + (oy + ky) * w + ox..][..kw];
                        let kr = &k[c * kh * kw + ky * kw..][..kw];
                        for (a, b) in row.iter().zip(kr) {
                            s += a * b;
                        }
                    }
                }
                out[m * oh * ow + oy * ow + ox] = s + bias[m];
            }
        }
    }
    Ok(out)
}

/// Returns (kernel gradient, bias gradient, input gradient).
fn conv_backward(
    kernels: &DenseMatrix,
    input: &[f64],
    delta: &[f64],
    in_shape: Shape,
    out_shape: Shape,
    kh: usize,
    kw: usize,
    need_input_grad: bool,
) -> (DenseMatrix, Vector, Vec<f64>) {
    let (c_in, h, w) = (in_shape.channels, in_shape.height, in_shape.width);
    let (maps, oh, ow) = (out_shape.channels, out_shape.height, out_shape.width);
    let mut dk = DenseMatrix::zeros(maps, c_in * kh * kw);
    let mut db = Vector::zeros(maps);
    let mut din = if need_input_grad { vec![0.0; in_shape.len()] } else { Vec::new() };
    for m in 0..maps {
        for oy in 0..oh {
            for ox in 0..ow {
                let d = delta[m * oh * ow + oy * ow + ox];
                db[m] += d;
                for c in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let col = c * kh * kw + ky * kw + kx;
                            let pos = c * h * w + (oy + ky) * w + ox + kx;
                            let g = dk.get(m, col) + d * input[pos];
                            dk.set(m, col, g);
                            if need_input_grad {
                                din[pos] += d * kernels.get(m, col);
                            }
                        }
                    }
                }
            }
        }
    }
    (dk, db, din)
}

fn pool_forward(input: &[f64], in_shape: Shape, out_shape: Shape, ph: usize, pw: usize) -> Vec<f64> {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let area = (ph * pw) as f64;
    let mut out = vec![0.0; out_shape.len()];
    for c in 0..in_shape.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = 0.0;
                for dy in 0..ph {
                    for dx in 0..pw {
                        s += input[c * h * w + (oy * ph + dy) * w + ox * pw + dx];
                    }
                }
                out[c * oh * ow + oy * ow + ox] = s / area;
            }
        }
    }
    out
}

/// Mean pooling spreads each output gradient uniformly over its window.
fn pool_backward(delta: &[f64], in_shape: Shape, out_shape: Shape, ph: usize, pw: usize) -> Vec<f64> {
    let (h, w) = (in_shape.height, in_shape.width);
    let (oh, ow) = (out_shape.height, out_shape.width);
    let area = (ph * pw) as f64;
    let mut din = vec![0.0; in_shape.len()];
    for c in 0..in_shape.channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = delta[c * oh * ow + oy * ow + ox] / area;
                for dy in 0..ph {
                    for dx in 0..pw {
                        din[c * h * w + (oy * ph + dy) * w + ox * pw + dx] = g;
                    }
                }
            }
        }
    }
    din
}

pub fn forward(spec: &NetworkSpec, params: &Parameters, input: &[f64]) -> Result<ForwardTrace> {
    if spec.is_recurrent() {
        return Err(Error::Config(
            "recurrent networks are evaluated with forward_sequence".into(),
        ));
    }
    check_layers(spec, params)?;
    if input.len() != spec.input_len() {
        return Err(Error::Shape(format!(
            "input of length {} for a network expecting {}",
            input.len(),
            spec.input_len()
        )));
    }
    let mut trace = ForwardTrace {
        pre: vec![Vector::from(input)],
        act: vec![Vector::from(input)],
    };
    for (k, (layer, p)) in spec.layers().iter().zip(&params.layers).enumerate() {
        let x = &trace.act[k];
        let (in_shape, out_shape) = (spec.shape(k), spec.shape(k + 1));
        let pre = match *layer {
            LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. } => {
                let (w, b) = dense_parts(p)?;
                dense_pre(w, b, x)?
            }
            LayerSpec::Conv2D {
                kernel_h, kernel_w, ..
            } => {
                let (kernels, bias) = conv_parts(p)?;
                conv_forward(kernels, bias, x, in_shape, out_shape, kernel_h, kernel_w)?
            }
            LayerSpec::MeanPool { h, w } => pool_forward(x, in_shape, out_shape, h, w),
            LayerSpec::RnnCell { .. } | LayerSpec::LstmCell { .. } => unreachable!("checked above"),
        };
        let act = layer.activation().apply(&pre)?;
        trace.pre.push(pre.into());
        trace.act.push(act);
    }
    Ok(trace)
}

pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    target: &[f64],
    loss_kind: LossKind,
) -> Result<(Gradients, f64)> {
    check_layers(spec, params)?;
    let n = spec.n();
    if trace.act.len() != n || trace.pre.len() != n {
        return Err(Error::Shape("trace does not match the network".into()));
    }
    if target.len() != spec.output_len() {
        return Err(Error::Shape(format!(
            "target of length {} for {} outputs",
            target.len(),
            spec.output_len()
        )));
    }
    let output = trace.output();
    let value = loss(loss_kind, output, target)?;
    let last = spec.layers().last().expect("non-empty").activation();
    let mut delta = output_delta(loss_kind, last, output, target)?;

    let mut grads = params.zeros_like();
    let mut deltas = vec![Vector::default(); n];
    for k in (0..spec.layers().len()).rev() {
        deltas[k + 1] = Vector::from(delta.as_slice());
        let x = &trace.act[k];
        let need_input_grad = k > 0;
        let d_in = match (spec.layers()[k], &params.layers[k], &mut grads.layers[k]) {
            (
                LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. },
                LayerParams::Dense { weights, .. },
                LayerParams::Dense {
                    weights: gw,
                    bias: gb,
                },
            ) => {
                gw.add_outer(x, &delta)?;
                gb.copy_from_slice(&delta);
                if need_input_grad {
                    weights.mul_vec(&delta)?
                } else {
                    Vec::new()
                }
            }
            (
                LayerSpec::Conv2D {
                    kernel_h, kernel_w, ..
                },
                LayerParams::Conv { kernels, .. },
                LayerParams::Conv {
                    kernels: gk,
                    bias: gb,
                },
            ) => {
                let (dk, db, din) = conv_backward(
                    kernels,
                    x,
                    &delta,
                    spec.shape(k),
                    spec.shape(k + 1),
                    kernel_h,
                    kernel_w,
                    need_input_grad,
                );
                *gk = dk;
                *gb = db;
                din
            }
            (LayerSpec::MeanPool { h, w }, _, _) => {
                pool_backward(&delta, spec.shape(k), spec.shape(k + 1), h, w)
            }
            (_, p, _) => {
                return Err(Error::Shape(format!(
                    "layer {k} cannot use {}",
                    kind_name(p)
                )))
            }
        };
        if need_input_grad {
            let below: Activation = spec.layers()[k - 1].activation();
            delta = below.backprop(&trace.act[k], &d_in);
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    Ok((
        Gradients {
            weights: grads,
            deltas,
        },
        value,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::params::init_params;
    use crate::tensor::Rng;

    #[test]
    fn zero_weights_give_half_activations() {
        let spec = NetworkSpec::dense(&[4, 3, 2], Activation::Sigmoid, Activation::Softmax).unwrap();
        let params = init_params(&spec, &mut Rng::new(0)).zeros_like();
        let trace = forward(&spec, &params, &[0.3, -1.0, 2.0, 0.5]).unwrap();
        assert!(trace.act[1].iter().all(|&a| a == 0.5));
    }

    #[test]
    fn mnist_fc_output_is_a_distribution() {
        let spec = NetworkSpec::mnist_fc();
        let mut rng = Rng::new(9);
        let params = init_params(&spec, &mut rng);
        let x = rng.uniform(0.0, 1.0, 784).unwrap();
        let trace = forward(&spec, &params, &x).unwrap();
        assert_eq!(trace.output().len(), 10);
        assert!((trace.output().sum() - 1.0).abs() <= 1e-12);
    }

    fn single_unit(w: f64, act: Activation) -> (NetworkSpec, Parameters) {
        let spec = NetworkSpec::dense(&[1, 1], act, act).unwrap();
        let params = Parameters {
            layers: vec![LayerParams::Dense {
                weights: DenseMatrix::from_vec(1, 1, vec![w]).unwrap(),
                bias: Vector::zeros(1),
            }],
        };
        (spec, params)
    }

    #[test]
    fn linear_unit() {
        let (spec, params) = single_unit(2.0, Activation::Identity);
        let trace = forward(&spec, &params, &[3.0]).unwrap();
        assert_eq!(trace.output().as_slice(), &[6.0]);
    }

    #[test]
    fn hand_chain_rule() {
        let (spec, params) = single_unit(0.0, Activation::Sigmoid);
        let trace = forward(&spec, &params, &[1.0]).unwrap();
        let (g, l) = backward(&spec, &params, &trace, &[1.0], LossKind::Mse).unwrap();
        assert_eq!(l, 0.125);
        match &g.weights.layers[0] {
            LayerParams::Dense { weights, bias } => {
                assert_eq!(weights.get(0, 0), -0.125);
                assert_eq!(bias[0], -0.125);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn perfect_output_has_zero_gradient() {
        let (spec, params) = single_unit(0.7, Activation::Identity);
        let trace = forward(&spec, &params, &[2.0]).unwrap();
        let (g, l) = backward(&spec, &params, &trace, &[1.4], LossKind::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.weights.max_abs(), 0.0);
    }

    #[test]
    fn shape_errors() {
        let spec = NetworkSpec::mnist_fc();
        let params = init_params(&spec, &mut Rng::new(0));
        assert!(matches!(forward(&spec, &params, &[0.0; 3]), Err(Error::Shape(_))));
        let trace = forward(&spec, &params, &[0.0; 784]).unwrap();
        assert!(backward(&spec, &params, &trace, &[0.0; 3], LossKind::Mse).is_err());
        let rnn = NetworkSpec::char_model(3, &[2], false).unwrap();
        let p = init_params(&rnn, &mut Rng::new(0));
        assert!(matches!(forward(&rnn, &p, &[0.0; 3]), Err(Error::Config(_))));
    }

    #[test]
    fn mean_pool_backward_is_uniform() {
        let s_in = Shape::image(1, 2, 2);
        let s_out = Shape::image(1, 1, 1);
        assert_eq!(pool_forward(&[1.0, 2.0, 3.0, 6.0], s_in, s_out, 2, 2), vec![3.0]);
        assert_eq!(pool_backward(&[4.0], s_in, s_out, 2, 2), vec![1.0; 4]);
    }
}
