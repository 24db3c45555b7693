use std::fmt;
use std::str::FromStr;

use super::NetError;

const MAX_WORKER_ID_BYTES: usize = 64;

/// Name of a worker, unique within a federation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WorkerId(String);

impl WorkerId {
    pub fn new(name: impl Into<String>) -> Result<Self, NetError> {
        let name = name.into();
        if name.is_empty() || name.len() > MAX_WORKER_ID_BYTES {
            return Err(NetError::InvalidWorkerId(name));
        }
        Ok(WorkerId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for WorkerId {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkerId::new(s)
    }
}

/// Key of an object inside a worker's store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Deterministic per-session id source.
#[derive(Debug, Clone)]
pub struct IdAllocator {
    next: u64,
}

impl IdAllocator {
    /// Ids are `seed`-namespaced in the upper 32 bits so concurrent sessions
    /// with different seeds do not collide on a shared worker.
    pub fn new(seed: u64) -> Self {
        IdAllocator {
            next: ((seed & 0xFFFF_FFFF) << 32) | 1,
        }
    }

    pub fn fresh(&mut self) -> ObjectId {
        let id = ObjectId(self.next);
        self.next = self.next.wrapping_add(1);
        id
    }
}
