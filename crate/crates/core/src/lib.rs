//! Federated learning runtime: tensors that live on remote workers, are
//! secret-shared between them, or are trained with differential privacy.

pub mod chain;
pub mod dp;
pub mod fixedpoint;
pub mod net;
pub mod spdz;
pub mod tensor;
pub mod train;
