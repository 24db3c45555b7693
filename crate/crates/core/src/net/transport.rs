use std::sync::{Arc, Mutex};

use super::protocol::{Request, Response};
use super::{Message, MsgType, NetError, ObjectId, WorkerId};
use crate::chain::Command;

/// Carries frames to one worker and returns its replies.
pub trait Transport: Send {
    fn round_trip(&mut self, req: &Message) -> Result<Message, NetError>;

    /// Sends several requests before reading replies. Replies come back in
    /// request order.
    fn pipeline(&mut self, reqs: &[Message]) -> Result<Vec<Message>, NetError> {
        reqs.iter().map(|r| self.round_trip(r)).collect()
    }
}

/// One observed request/reply exchange.
#[derive(Debug, Clone)]
pub struct TapRecord {
    pub worker: WorkerId,
    pub request_type: MsgType,
    pub command: Option<String>,
    pub request: Vec<u8>,
    pub reply_type: Option<MsgType>,
    pub reply: Vec<u8>,
}

/// Shared log of everything that crossed a set of tapped transports.
#[derive(Debug, Clone, Default)]
pub struct Tap {
    records: Arc<Mutex<Vec<TapRecord>>>,
}

impl Tap {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, r: TapRecord) {
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .push(r);
    }

    pub fn records(&self) -> Vec<TapRecord> {
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clear();
    }

    pub fn count(&self, t: MsgType) -> usize {
        self.records
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .filter(|r| r.request_type == t)
            .count()
    }

    /// Records since index `from`.
    pub fn since(&self, from: usize) -> Vec<TapRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner())[from..].to_vec()
    }
}

struct Tapped {
    inner: Box<dyn Transport>,
    worker: WorkerId,
    tap: Tap,
}

impl Tapped {
    fn record(&self, req: &Message, reply: &Message) {
        let Some(request_type) = req.kind() else {
            return;
        };
        let command = match Request::from_message(req) {
            Ok(Request::Execute(cmd)) => Some(cmd.name),
            _ => None,
        };
        self.tap.push(TapRecord {
            worker: self.worker.clone(),
            request_type,
            command,
            request: req.payload.clone(),
            reply_type: reply.kind(),
            reply: reply.payload.clone(),
        });
    }
}

impl Transport for Tapped {
    fn round_trip(&mut self, req: &Message) -> Result<Message, NetError> {
        let reply = self.inner.round_trip(req)?;
        self.record(req, &reply);
        Ok(reply)
    }

    fn pipeline(&mut self, reqs: &[Message]) -> Result<Vec<Message>, NetError> {
        let replies = self.inner.pipeline(reqs)?;
        for (q, r) in reqs.iter().zip(&replies) {
            self.record(q, r);
        }
        Ok(replies)
    }
}

/// Typed client for one worker.
pub struct WorkerClient {
    worker: WorkerId,
    transport: Box<dyn Transport>,
    next_request: u64,
}

impl std::fmt::Debug for WorkerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkerClient")
            .field("worker", &self.worker)
            .finish()
    }
}

impl WorkerClient {
    pub fn new(worker: WorkerId, transport: Box<dyn Transport>) -> Self {
        WorkerClient {
            worker,
            transport,
            next_request: 1,
        }
    }

    /// Routes all further traffic through `tap`.
    pub fn tapped(self, tap: &Tap) -> Self {
        let worker = self.worker.clone();
        WorkerClient {
            transport: Box::new(Tapped {
                inner: self.transport,
                worker: worker.clone(),
                tap: tap.clone(),
            }),
            worker,
            next_request: self.next_request,
        }
    }

    pub fn worker(&self) -> &WorkerId {
        &self.worker
    }

    fn next_id(&mut self) -> u64 {
        let id = self.next_request;
        self.next_request += 1;
        id
    }

    fn check_reply(rid: u64, reply: &Message) -> Result<(), NetError> {
        if reply.request_id != rid {
            return Err(NetError::UnexpectedReply(format!(
                "reply id {} for request {rid}",
                reply.request_id
            )));
        }
        Ok(())
    }

    pub fn request(&mut self, req: Request) -> Result<Response, NetError> {
        let rid = self.next_id();
        let reply = self.transport.round_trip(&req.to_message(rid))?;
        Self::check_reply(rid, &reply)?;
        Response::from_reply(&req, reply)
    }

    /// Issues all requests in one flight. The outer error is a channel
    /// failure; inner errors are per-request rejections.
    pub fn pipeline(
        &mut self,
        reqs: Vec<Request>,
    ) -> Result<Vec<Result<Response, NetError>>, NetError> {
        let first = self.next_request;
        let msgs: Vec<Message> = reqs
            .iter()
            .map(|r| {
                let rid = self.next_id();
                r.to_message(rid)
            })
            .collect();
        let replies = self.transport.pipeline(&msgs)?;
        if replies.len() != reqs.len() {
            return Err(NetError::UnexpectedReply(format!(
                "{} replies for {} requests",
                replies.len(),
                reqs.len()
            )));
        }
        let mut out = Vec::with_capacity(reqs.len());
        for (i, (req, reply)) in reqs.iter().zip(replies).enumerate() {
            Self::check_reply(first + i as u64, &reply)?;
            out.push(Response::from_reply(req, reply));
        }
        Ok(out)
    }

    pub fn store(&mut self, id: ObjectId, bytes: Vec<u8>) -> Result<(), NetError> {
        self.request(Request::Store { id, bytes }).map(|_| ())
    }

    pub fn fetch(&mut self, id: ObjectId, delete: bool) -> Result<Vec<u8>, NetError> {
        match self.request(Request::Get { id, delete })? {
            Response::Bytes(b) => Ok(b),
            other => Err(NetError::UnexpectedReply(format!("{other:?}"))),
        }
    }

    pub fn delete(&mut self, id: ObjectId) -> Result<(), NetError> {
        self.request(Request::Delete { id }).map(|_| ())
    }

    pub fn execute(&mut self, cmd: Command) -> Result<ObjectId, NetError> {
        match self.request(Request::Execute(cmd))? {
            Response::Id(id) => Ok(id),
            other => Err(NetError::UnexpectedReply(format!("{other:?}"))),
        }
    }
}
