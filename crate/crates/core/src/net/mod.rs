//! Workers and their transport.
//!
//! A [`Worker`] owns an object store and executes commands. Clients reach it
//! either in-process through a [`VirtualRegistry`] or over TCP via
//! [`socket`]; both speak the same framed protocol, so swapping transports
//! never changes results.

pub mod codec;
pub mod exec;
pub mod frame;
mod ids;
pub mod protocol;
pub mod socket;
mod store;
mod transport;
mod virtual_worker;
mod worker;

use thiserror::Error;

pub use frame::{Message, MsgType};
pub use ids::{IdAllocator, ObjectId, WorkerId};
pub use protocol::{Request, Response};
pub use store::ObjectStore;
pub use transport::{Tap, TapRecord, Transport, WorkerClient};
pub use virtual_worker::{VirtualRegistry, VirtualTransport};
pub use worker::{worker_seed, PeerConnector, Worker};

/// Error codes carried in ERROR frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum ErrorCode {
    NotFound = 1,
    Duplicate = 2,
    UnknownCommand = 3,
    Malformed = 4,
    Internal = 5,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid worker id {0:?}")]
    InvalidWorkerId(String),
    #[error("object not found: {0}")]
    ObjectNotFound(String),
    #[error("duplicate object: {0}")]
    DuplicateObject(String),
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("remote error: {0}")]
    Remote(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unknown worker {0}")]
    WorkerUnknown(String),
    #[error("cannot bind {addr}: {reason}")]
    Bind { addr: String, reason: String },
    #[error("unexpected reply: {0}")]
    UnexpectedReply(String),
}

impl NetError {
    pub fn code(&self) -> ErrorCode {
        match self {
            NetError::ObjectNotFound(_) => ErrorCode::NotFound,
            NetError::DuplicateObject(_) => ErrorCode::Duplicate,
            NetError::UnknownCommand(_) => ErrorCode::UnknownCommand,
            NetError::Malformed(_) => ErrorCode::Malformed,
            _ => ErrorCode::Internal,
        }
    }

    pub fn from_code(code: u32, message: String) -> NetError {
        match code {
            1 => NetError::ObjectNotFound(message),
            2 => NetError::DuplicateObject(message),
            3 => NetError::UnknownCommand(message),
            4 => NetError::Malformed(message),
            _ => NetError::Remote(message),
        }
    }

    /// True for failures of the channel itself rather than of a request.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            NetError::Transport(_) | NetError::Bind { .. } | NetError::UnexpectedReply(_)
        )
    }
}

impl From<std::io::Error> for NetError {
    fn from(e: std::io::Error) -> Self {
        NetError::Transport(e.to_string())
    }
}
