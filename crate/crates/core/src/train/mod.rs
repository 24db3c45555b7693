//! Models, datasets and the training loops: plain SGD, federated SGD,
//! differentially private federated SGD, and shared inference.

mod bench;
mod data;
mod federation;
mod loops;
mod metrics;
mod model;
mod mpc;

use thiserror::Error;

use crate::chain::ChainError;
use crate::dp::DpError;
use crate::fixedpoint::FixedPointError;
use crate::net::NetError;
use crate::spdz::SpdzError;
use crate::tensor::TensorError;

pub use bench::{benchmark, BenchConfig, BenchReport, ModeTiming};
pub use data::{
    load_dataset, parse_dataset, DatasetKind, FederatedDataset, Partition, Split, TargetScaler,
};
pub use federation::{Federation, TransportKind};
pub use loops::{
    dp_lr, evaluate, train_federated, train_federated_dp, train_plain, DpOutcome, Metric,
    TrainConfig, TrainOutcome, DEFAULT_HIDDEN, DP_CLIP, DP_PHASES,
};
pub use metrics::{RunSummary, Trace, TraceRow, SCHEMA_VERSION};
pub use model::{mlp_layers, Layer, Model, INIT_STD};
pub use mpc::{fixed_point_forward, mpc_forward, triple_plan};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Binary,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Binary => "binary",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        match s {
            "regression" => Some(Task::Regression),
            "binary" => Some(Task::Binary),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("lot size {lot} exceeds partition of {rows} rows")]
    LotTooLarge { lot: usize, rows: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Spdz(#[from] SpdzError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
}

impl TrainError {
    /// Transport failures, wherever they surfaced.
    pub fn is_transport(&self) -> bool {
        match self {
            TrainError::Net(e) | TrainError::Chain(ChainError::Net(e)) => e.is_transport(),
            _ => false,
        }
    }
}
