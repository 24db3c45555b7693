//! A leader session wired to a set of data workers and an optional dealer.

use std::collections::HashMap;
use std::sync::Arc;

use super::TrainError;
use crate::chain::Session;
use crate::net::socket::{self, ServerHandle, SocketPeers};
use crate::net::{worker_seed, Tap, VirtualRegistry, Worker, WorkerClient, WorkerId};

pub const LEADER: &str = "leader";
pub const DEALER: &str = "dealer";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    /// In-process workers.
    Virtual,
    /// Workers served over loopback TCP from this process.
    Socket,
}

impl TransportKind {
    pub fn name(self) -> &'static str {
        match self {
            TransportKind::Virtual => "virtual",
            TransportKind::Socket => "socket",
        }
    }

    pub fn parse(s: &str) -> Option<TransportKind> {
        match s {
            "virtual" => Some(TransportKind::Virtual),
            "socket" => Some(TransportKind::Socket),
            _ => None,
        }
    }
}

pub fn data_worker(i: usize) -> WorkerId {
    WorkerId::new(format!("w{i}")).expect("valid worker name")
}

/// Owns the session and whatever keeps its workers alive.
pub struct Federation {
    pub session: Session,
    workers: Vec<WorkerId>,
    dealer: Option<WorkerId>,
    servers: Vec<ServerHandle>,
    _registry: Option<VirtualRegistry>,
}

impl std::fmt::Debug for Federation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Federation")
            .field("workers", &self.workers)
            .field("dealer", &self.dealer)
            .finish()
    }
}

impl Federation {
    /// Spawns `n` data workers (`w0`, `w1`, ...) and, if asked, a dealer.
    /// Every worker's private seed derives from `seed` and its name, so the
    /// two transports produce identical runs.
    pub fn local(
        kind: TransportKind,
        n: usize,
        seed: u64,
        with_dealer: bool,
        tap: Option<&Tap>,
    ) -> Result<Federation, TrainError> {
        if n == 0 {
            return Err(TrainError::Config("at least one worker is required".into()));
        }
        let mut ids: Vec<WorkerId> = (0..n).map(data_worker).collect();
        let dealer = with_dealer.then(|| WorkerId::new(DEALER).expect("valid worker name"));
        ids.extend(dealer.clone());
        let mut session = Session::new(WorkerId::new(LEADER).expect("valid worker name"), seed);
        let wrap = |c: WorkerClient| match tap {
            Some(t) => c.tapped(t),
            None => c,
        };
        let (registry, servers) = match kind {
            TransportKind::Virtual => {
                let reg = VirtualRegistry::new();
                for id in &ids {
                    reg.spawn(id.clone(), worker_seed(seed, id))?;
                    session.add_worker(wrap(reg.connect(id)?));
                }
                (Some(reg), Vec::new())
            }
            TransportKind::Socket => {
                let mut servers = Vec::new();
                let mut addrs = HashMap::new();
                for id in &ids {
                    let w = Arc::new(Worker::new(id.clone(), worker_seed(seed, id)));
                    let h = socket::serve("127.0.0.1:0", w)?;
                    addrs.insert(id.clone(), h.local_addr().to_string());
                    servers.push(h);
                }
                let peers = Arc::new(SocketPeers::new(addrs.clone()));
                for h in &servers {
                    h.worker().set_peers(peers.clone());
                }
                for id in &ids {
                    session.add_worker(wrap(socket::connect(id.clone(), addrs[id].as_str())?));
                }
                (None, servers)
            }
        };
        if let Some(d) = &dealer {
            session.set_dealer(d.clone());
        }
        Ok(Federation {
            session,
            workers: ids[..n].to_vec(),
            dealer,
            servers,
            _registry: registry,
        })
    }

    /// Connects to workers already serving elsewhere, given as `(id, addr)`.
    pub fn remote(
        workers: &[(WorkerId, String)],
        dealer: Option<(WorkerId, String)>,
        seed: u64,
        tap: Option<&Tap>,
    ) -> Result<Federation, TrainError> {
        if workers.is_empty() {
            return Err(TrainError::Config("at least one worker is required".into()));
        }
        let mut session = Session::new(WorkerId::new(LEADER).expect("valid worker name"), seed);
        for (id, addr) in workers.iter().chain(dealer.iter()) {
            let c = socket::connect(id.clone(), addr.as_str())?;
            session.add_worker(match tap {
                Some(t) => c.tapped(t),
                None => c,
            });
        }
        if let Some((d, _)) = &dealer {
            session.set_dealer(d.clone());
        }
        Ok(Federation {
            session,
            workers: workers.iter().map(|(id, _)| id.clone()).collect(),
            dealer: dealer.map(|(id, _)| id),
            servers: Vec::new(),
            _registry: None,
        })
    }

    /// Data workers, in partition order.
    pub fn workers(&self) -> &[WorkerId] {
        &self.workers
    }

    pub fn dealer(&self) -> Option<&WorkerId> {
        self.dealer.as_ref()
    }
}

impl Drop for Federation {
    fn drop(&mut self) {
        self.session.collect_garbage();
        for h in self.servers.drain(..) {
            h.shutdown();
        }
    }
}
