//! Distributed deep-network training: column-partitioned model parallelism,
//! parameter-server data parallelism, an analytic communication cost model
//! reconciled against measured traffic, and a delayed-SGD regret lab.

pub mod costmodel;
pub mod data_io;
pub mod data_parallel;
pub mod error;
pub mod model_parallel;
pub mod network;
pub mod optim;
pub mod regret_lab;
pub mod tensor;
pub mod train;
pub mod transport;
pub mod verify;

pub use error::{Error, Result};

pub use costmodel::{cost_breakdown, CostBreakdown, CostParams};
pub use data_parallel::{Driver, ParameterServer, ReplicaConfig};
pub use model_parallel::{ExchangeMode, MpConfig, MpEngine};
pub use network::{init_params, LossKind, NetworkSpec, Parameters};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::{Activation, DenseMatrix, Rng, Vector};
pub use transport::{MessageStats, Tag, WorkerId};
