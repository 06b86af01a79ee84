//! Architecture descriptions and the single-machine reference passes for
//! fully connected, convolutional, RNN and LSTM networks.

mod feedforward;
mod loss;
mod params;
mod recurrent;
mod spec;

pub use feedforward::{backward, dense_pre, forward, ForwardTrace};
pub use loss::{loss, output_delta, LossKind, LOG_FLOOR};
pub use params::{
    init_params, GateParams, Gradients, LayerParams, Parameters, LSTM_CANDIDATE, LSTM_FORGET,
    LSTM_INPUT, LSTM_OUTPUT,
};
pub use recurrent::{
    forward_sequence, sample_sequence, step_forward, tbptt_step, CellTrace, Mask,
    RecurrentState, SampleMode, SequenceTrace, StepTrace, DEFAULT_TRUNCATION,
};
pub use spec::{LayerSpec, NetworkSpec, Shape};
