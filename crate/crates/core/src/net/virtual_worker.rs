use std::collections::HashMap;
use std::sync::{Arc, RwLock, Weak};

use super::{Message, NetError, PeerConnector, Transport, Worker, WorkerClient, WorkerId};

type Workers = RwLock<HashMap<WorkerId, Arc<Worker>>>;

/// Process-local set of workers addressed by id.
///
/// Handles obtained from the same registry alias the same workers.
#[derive(Debug, Clone, Default)]
pub struct VirtualRegistry {
    workers: Arc<Workers>,
}

impl VirtualRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates and registers a worker; it can reach every other worker in
    /// this registry as a peer.
    pub fn spawn(&self, id: WorkerId, seed: u64) -> Result<Arc<Worker>, NetError> {
        let mut map = self.workers.write().unwrap_or_else(|p| p.into_inner());
        if map.contains_key(&id) {
            return Err(NetError::DuplicateObject(format!("worker {id}")));
        }
        let worker = Arc::new(Worker::new(id.clone(), seed));
        worker.set_peers(Arc::new(RegistryPeers {
            workers: Arc::downgrade(&self.workers),
        }));
        map.insert(id, worker.clone());
        Ok(worker)
    }

    pub fn worker(&self, id: &WorkerId) -> Option<Arc<Worker>> {
        self.workers
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
    }

    pub fn connect(&self, id: &WorkerId) -> Result<WorkerClient, NetError> {
        let worker = self
            .worker(id)
            .ok_or_else(|| NetError::WorkerUnknown(id.to_string()))?;
        Ok(WorkerClient::new(
            id.clone(),
            Box::new(VirtualTransport { worker }),
        ))
    }
}

struct RegistryPeers {
    workers: Weak<Workers>,
}

impl PeerConnector for RegistryPeers {
    fn connect(&self, peer: &WorkerId) -> Result<Box<dyn Transport>, NetError> {
        let workers = self
            .workers
            .upgrade()
            .ok_or_else(|| NetError::WorkerUnknown(peer.to_string()))?;
        let worker = workers
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(peer)
            .cloned()
            .ok_or_else(|| NetError::WorkerUnknown(peer.to_string()))?;
        Ok(Box::new(VirtualTransport { worker }))
    }
}

/// In-process transport. Frames are still encoded and decoded so the
/// worker sees exactly what a socket would deliver.
pub struct VirtualTransport {
    worker: Arc<Worker>,
}

impl VirtualTransport {
    pub fn new(worker: Arc<Worker>) -> Self {
        VirtualTransport { worker }
    }
}

impl Transport for VirtualTransport {
    fn round_trip(&mut self, req: &Message) -> Result<Message, NetError> {
        let wire = req.encode();
        let decoded = Message::decode(&wire)?;
        let reply = self.worker.handle(&decoded);
        Message::decode(&reply.encode())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ObjectId;

    #[test]
    fn handles_alias_the_same_worker() {
        let reg = VirtualRegistry::new();
        let alice = WorkerId::new("alice").unwrap();
        reg.spawn(alice.clone(), 0).unwrap();
        let mut h1 = reg.connect(&alice).unwrap();
        let mut h2 = reg.clone().connect(&alice).unwrap();
        h1.store(ObjectId(1), vec![1, 2, 3]).unwrap();
        assert_eq!(h2.fetch(ObjectId(1), false).unwrap(), vec![1, 2, 3]);
        assert!(reg.spawn(alice, 0).is_err());
        assert!(matches!(
            reg.connect(&WorkerId::new("nobody").unwrap()),
            Err(NetError::WorkerUnknown(_))
        ));
    }
}
