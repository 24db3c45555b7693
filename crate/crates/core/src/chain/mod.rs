//! Tensor chains: a head whose behaviour is defined by the nodes below it.
//!
//! A chain is one of
//! - `head -> Local` (the Local node loops back to the head's payload),
//! - `head -> Pointer` (data lives on a worker),
//! - `head -> FixedPrecision -> Local | Pointer | Shared`,
//! - `head -> Shared -> {Pointer, ...}` (additive shares on several workers).
//!
//! Commands are forwarded down the chain: local chains run the native
//! kernel, pointer chains execute on the owning worker, and shared chains
//! run the secret-sharing protocol. [`Session`] is the leader that drives
//! all three.

mod command;
mod node;
mod object;
pub mod registry;
mod session;

use thiserror::Error;

use crate::fixedpoint::FixedPointError;
use crate::net::NetError;
use crate::spdz::SpdzError;
use crate::tensor::TensorError;

pub use command::{Arg, Command};
pub use node::{Chain, ChainNode, NodeKind, NodeTag};
pub use object::LocalObject;
pub use session::{CallArg, Session, ShareRefs};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("chain kind mismatch: {0}")]
    KindMismatch(String),
    #[error("bad argument: {0}")]
    BadArgument(String),
    #[error("{0}")]
    Kernel(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Spdz(#[from] SpdzError),
}

pub type Result<T> = std::result::Result<T, ChainError>;
