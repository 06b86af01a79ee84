use crate::error::{Error, Result};
use crate::tensor::Activation;

/// Spatial layout of a layer's output: `channels x height x width`.
/// Flat layers use `channels = len, height = width = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(len: usize) -> Self {
        Self {
            channels: len,
            height: 1,
            width: 1,
        }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Valid (unpadded) cross-correlation with stride 1.
    Conv2D {
        kernel_h: usize,
        kernel_w: usize,
        maps: usize,
        activation: Activation,
    },
    /// Non-overlapping mean pooling; the input must tile exactly.
    MeanPool { h: usize, w: usize },
    /// Fully connected layer over the flattened input followed by softmax.
    SoftmaxOutput { classes: usize },
    RnnCell { hidden: usize },
    /// Input, forget, output and candidate gates; no peepholes.
    LstmCell { hidden: usize },
}

impl LayerSpec {
    pub fn is_recurrent(&self) -> bool {
        matches!(self, LayerSpec::RnnCell { .. } | LayerSpec::LstmCell { .. })
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Dense { activation, .. } | LayerSpec::Conv2D { activation, .. } => {
                activation
            }
            LayerSpec::SoftmaxOutput { .. } => Activation::Softmax,
            LayerSpec::RnnCell { .. } => Activation::Tanh,
            LayerSpec::MeanPool { .. } | LayerSpec::LstmCell { .. } => Activation::Identity,
        }
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        let zero = |what: &str| Error::Config(format!("{what} must be at least 1 in {self:?}"));
        match *self {
            LayerSpec::Dense {
                inputs, outputs, ..
            } => {
                if inputs == 0 || outputs == 0 {
                    return Err(zero("dense size"));
                }
                if inputs != input.len() {
                    return Err(Error::Shape(format!(
                        "dense layer expects {inputs} inputs but receives {}",
                        input.len()
                    )));
                }
                Ok(Shape::flat(outputs))
            }
            LayerSpec::SoftmaxOutput { classes } => {
                if classes == 0 {
                    return Err(zero("class count"));
                }
                Ok(Shape::flat(classes))
            }
            LayerSpec::Conv2D {
                kernel_h,
                kernel_w,
                maps,
                ..
            } => {
                if kernel_h == 0 || kernel_w == 0 || maps == 0 {
                    return Err(zero("kernel size and map count"));
                }
                if kernel_h > input.height || kernel_w > input.width {
                    return Err(Error::Shape(format!(
                        "{kernel_h}x{kernel_w} kernel larger than {}x{} input",
                        input.height, input.width
                    )));
                }
                Ok(Shape::image(
                    maps,
                    input.height - kernel_h + 1,
                    input.width - kernel_w + 1,
                ))
            }
            LayerSpec::MeanPool { h, w } => {
                if h == 0 || w == 0 {
                    return Err(zero("pool size"));
                }
                if !input.height.is_multiple_of(h) || !input.width.is_multiple_of(w) {
                    return Err(Error::Shape(format!(
                        "{h}x{w} pooling does not tile a {}x{} input",
                        input.height, input.width
                    )));
                }
                Ok(Shape::image(input.channels, input.height / h, input.width / w))
            }
            LayerSpec::RnnCell { hidden } | LayerSpec::LstmCell { hidden } => {
                if hidden == 0 {
                    return Err(zero("hidden size"));
                }
                Ok(Shape::flat(hidden))
            }
        }
    }
}

/// Ordered layer list plus the derived per-layer shapes.
///
/// Layer `0` is the input; `layers[k]` produces layer `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    shapes: Vec<Shape>,
}

impl NetworkSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        if input.is_empty() {
            return Err(Error::Config("input size must be at least 1".into()));
        }
        let recurrent = layers.iter().any(LayerSpec::is_recurrent);
        let mut shapes = vec![input];
        for (k, layer) in layers.iter().enumerate() {
            if recurrent
                && matches!(layer, LayerSpec::Conv2D { .. } | LayerSpec::MeanPool { .. })
            {
                return Err(Error::Config(
                    "convolution and pooling cannot be mixed with recurrent cells".into(),
                ));
            }
            if matches!(layer.activation(), Activation::Softmax) && k + 1 != layers.len() {
                return Err(Error::Config("softmax is only allowed on the output layer".into()));
            }
            let next = layer.output_shape(*shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self { layers, shapes })
    }

    /// Fully connected net over the given neuron counts.
    pub fn dense(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("a dense net needs at least two layer sizes".into()));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerSpec::Dense {
                inputs: w[0],
                outputs: w[1],
                activation: if k + 2 == sizes.len() { output } else { hidden },
            })
            .collect();
        Self::new(Shape::flat(sizes[0]), layers)
    }

    /// The 784-480-160-10 sigmoid/softmax classifier.
    pub fn mnist_fc() -> Self {
        Self::dense(&[784, 480, 160, 10], Activation::Sigmoid, Activation::Softmax)
            .expect("static layout")
    }

    /// Conv 5x5/6 -> pool 2x2 -> conv 5x5/12 -> pool 2x2 -> conv 4x4/12 -> softmax.
    pub fn mnist_cnn() -> Self {
        let conv = |k, maps| LayerSpec::Conv2D {
            kernel_h: k,
            kernel_w: k,
            maps,
            activation: Activation::Tanh,
        };
        Self::new(
            Shape::image(1, 28, 28),
            vec![
                conv(5, 6),
                LayerSpec::MeanPool { h: 2, w: 2 },
                conv(5, 12),
                LayerSpec::MeanPool { h: 2, w: 2 },
                conv(4, 12),
                LayerSpec::SoftmaxOutput { classes: 10 },
            ],
        )
        .expect("static layout")
    }

    /// Character model: stacked recurrent cells and a softmax over the vocabulary.
    pub fn char_model(vocab: usize, hidden: &[usize], lstm: bool) -> Result<Self> {
        let mut layers: Vec<LayerSpec> = hidden
            .iter()
            .map(|&h| {
                if lstm {
                    LayerSpec::LstmCell { hidden: h }
                } else {
                    LayerSpec::RnnCell { hidden: h }
                }
            })
            .collect();
        layers.push(LayerSpec::SoftmaxOutput { classes: vocab });
        Self::new(Shape::flat(vocab), layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Total layer count including the input layer.
    pub fn n(&self) -> usize {
        self.shapes.len()
    }

    /// Neuron count of layer `i`.
    pub fn b(&self, i: usize) -> usize {
        self.shapes[i].len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.shapes.iter().map(Shape::len).collect()
    }

    pub fn shape(&self, i: usize) -> Shape {
        self.shapes[i]
    }

    pub fn input_len(&self) -> usize {
        self.b(0)
    }

    pub fn output_len(&self) -> usize {
        self.b(self.n() - 1)
    }

    pub fn is_recurrent(&self) -> bool {
        self.layers.iter().any(LayerSpec::is_recurrent)
    }

    /// True when every layer is a plain weighted layer over flat vectors.
    pub fn is_fully_connected(&self) -> bool {
        self.layers
            .iter()
            .all(|l| matches!(l, LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. }))
    }
}
