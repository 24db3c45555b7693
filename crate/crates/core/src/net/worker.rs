use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::protocol::{error_message, Request, Response};
use super::{exec, Message, NetError, ObjectStore, Transport, WorkerId};

/// Opens a channel from one worker to another, used when a worker must push
/// an object (a share, a triple component) directly to a peer.
pub trait PeerConnector: Send + Sync {
    fn connect(&self, peer: &WorkerId) -> Result<Box<dyn Transport>, NetError>;
}

/// A worker: an object store plus a private random source.
///
/// The random source is seeded by the worker's operator and never leaves the
/// worker, so noise and shares it draws are unknown to the leader.
pub struct Worker {
    id: WorkerId,
    store: ObjectStore,
    rng: Mutex<ChaCha20Rng>,
    peers: RwLock<Option<Arc<dyn PeerConnector>>>,
}

impl std::fmt::Debug for Worker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Worker")
            .field("id", &self.id)
            .field("objects", &self.store.len())
            .finish()
    }
}

impl Worker {
    pub fn new(id: WorkerId, seed: u64) -> Self {
        Worker {
            id,
            store: ObjectStore::new(),
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed)),
            peers: RwLock::new(None),
        }
    }

    pub fn id(&self) -> &WorkerId {
        &self.id
    }

    pub fn store(&self) -> &ObjectStore {
        &self.store
    }

    pub fn set_peers(&self, peers: Arc<dyn PeerConnector>) {
        *self.peers.write().unwrap_or_else(|p| p.into_inner()) = Some(peers);
    }

    pub(crate) fn rng(&self) -> MutexGuard<'_, ChaCha20Rng> {
        self.rng.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn connect_peer(&self, peer: &WorkerId) -> Result<Box<dyn Transport>, NetError> {
        let guard = self.peers.read().unwrap_or_else(|p| p.into_inner());
        match guard.as_ref() {
            Some(c) => c.connect(peer),
            None => Err(NetError::WorkerUnknown(format!(
                "{} has no route to peer {peer}",
                self.id
            ))),
        }
    }

    /// Services one request frame. Never fails: errors become ERROR frames
    /// carrying the request id.
    pub fn handle(&self, msg: &Message) -> Message {
        let rid = msg.request_id;
        let outcome = Request::from_message(msg).and_then(|req| self.serve(req));
        match outcome {
            Ok(resp) => resp.to_message(rid),
            Err(e) => {
                log::debug!("{}: request {rid} failed: {e}", self.id);
                error_message(rid, &e)
            }
        }
    }

    fn serve(&self, req: Request) -> Result<Response, NetError> {
        match req {
            Request::Store { id, bytes } => {
                self.store.insert(id, bytes)?;
                Ok(Response::Ack)
            }
            Request::Get { id, delete } => Ok(Response::Bytes(self.store.fetch(id, delete)?)),
            Request::Delete { id } => {
                self.store.remove(id)?;
                Ok(Response::Ack)
            }
            Request::Execute(cmd) => {
                exec::execute(self, &cmd)?;
                Ok(Response::Id(cmd.result_id))
            }
        }
    }
}

/// Derives a worker's private seed from a federation seed and its name, so a
/// virtual and a socket federation built from the same seed behave alike.
pub fn worker_seed(base: u64, id: &WorkerId) -> u64 {
    // FNV-1a over the name, mixed with the base seed through splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_str().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    let mut z = base ^ h ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
