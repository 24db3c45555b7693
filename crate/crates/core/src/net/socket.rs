//! TCP transport: a threaded worker server and a blocking client.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::frame::{read_frame, ReadOutcome};
use super::protocol::error_message;
use super::{Message, NetError, PeerConnector, Transport, Worker, WorkerClient, WorkerId};

/// A running worker server. Dropping the handle does not stop the server;
/// call [`ServerHandle::shutdown`].
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
    worker: Arc<Worker>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn worker(&self) -> &Arc<Worker> {
        &self.worker
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Open connections finish when their clients disconnect.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    /// Blocks until another thread triggers shutdown through `stop_flag`.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Flag that, once set and followed by [`wake`], stops the accept loop.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        wake(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Unblocks an accept loop by connecting to it.
pub fn wake(addr: SocketAddr) {
    let _ = TcpStream::connect(addr);
}

/// Binds `listen_addr` and serves `worker` on background threads.
pub fn serve(listen_addr: &str, worker: Arc<Worker>) -> Result<ServerHandle, NetError> {
    let listener = TcpListener::bind(listen_addr).map_err(|e| NetError::Bind {
        addr: listen_addr.to_string(),
        reason: e.to_string(),
    })?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept_thread = {
        let stop = stop.clone();
        let worker = worker.clone();
        thread::Builder::new()
            .name(format!("accept-{}", worker.id()))
            .spawn(move || accept_loop(listener, worker, stop))
            .map_err(|e| NetError::Transport(e.to_string()))?
    };
    log::info!("worker {} listening on {addr}", worker.id());
    Ok(ServerHandle {
        addr,
        stop,
        accept_thread: Some(accept_thread),
        worker,
    })
}

fn accept_loop(listener: TcpListener, worker: Arc<Worker>, stop: Arc<AtomicBool>) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        match conn {
            Ok(stream) => {
                let worker = worker.clone();
                let spawned = thread::Builder::new()
                    .name(format!("conn-{}", worker.id()))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &worker) {
                            log::debug!("connection to {} ended: {e}", worker.id());
                        }
                    });
                if let Err(e) = spawned {
                    log::warn!("cannot spawn connection thread: {e}");
                }
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
}

fn serve_connection(stream: TcpStream, worker: &Worker) -> Result<(), NetError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let reply = match read_frame(&mut reader) {
            Ok(ReadOutcome::Frame(msg)) => worker.handle(&msg),
            Ok(ReadOutcome::Invalid { request_id, reason }) => {
                error_message(request_id, &NetError::Malformed(reason))
            }
            Ok(ReadOutcome::Closed) => return Ok(()),
            Err(e @ NetError::Malformed(_)) => {
                // Oversized frame: the stream cannot be realigned.
                let _ = error_message(0, &e).write_to(&mut writer);
                let _ = writer.flush();
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        reply.write_to(&mut writer)?;
        // Batch replies to pipelined requests into one write.
        if reader.buffer().is_empty() {
            writer.flush()?;
        }
    }
}

/// Blocking client side of one worker connection.
pub struct SocketTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl SocketTransport {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, NetError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(SocketTransport {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    fn read_reply(&mut self) -> Result<Message, NetError> {
        match read_frame(&mut self.reader)? {
            ReadOutcome::Frame(m) => Ok(m),
            ReadOutcome::Invalid { reason, .. } => Err(NetError::UnexpectedReply(reason)),
            ReadOutcome::Closed => Err(NetError::Transport("worker closed the connection".into())),
        }
    }
}

impl Transport for SocketTransport {
    fn round_trip(&mut self, req: &Message) -> Result<Message, NetError> {
        self.writer.write_all(&req.encode())?;
        self.read_reply()
    }

    fn pipeline(&mut self, reqs: &[Message]) -> Result<Vec<Message>, NetError> {
        let mut buf = Vec::new();
        for r in reqs {
            buf.extend_from_slice(&r.encode());
        }
        self.writer.write_all(&buf)?;
        reqs.iter().map(|_| self.read_reply()).collect()
    }
}

pub fn connect(id: WorkerId, addr: impl ToSocketAddrs) -> Result<WorkerClient, NetError> {
    Ok(WorkerClient::new(
        id,
        Box::new(SocketTransport::connect(addr)?),
    ))
}

/// Static address book of socket workers, used for worker-to-worker pushes.
#[derive(Debug, Clone, Default)]
pub struct SocketPeers {
    addrs: HashMap<WorkerId, String>,
}

impl SocketPeers {
    pub fn new(addrs: HashMap<WorkerId, String>) -> Self {
        SocketPeers { addrs }
    }
}

impl PeerConnector for SocketPeers {
    fn connect(&self, peer: &WorkerId) -> Result<Box<dyn Transport>, NetError> {
        let addr = self
            .addrs
            .get(peer)
            .ok_or_else(|| NetError::WorkerUnknown(peer.to_string()))?;
        Ok(Box::new(SocketTransport::connect(addr.as_str())?))
    }
}
