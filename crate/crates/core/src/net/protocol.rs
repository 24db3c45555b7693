//! Typed requests and replies over [`Message`] frames.
//!
//! | type    | request payload          | RESULT payload      |
//! |---------|--------------------------|---------------------|
//! | STORE   | id u64 LE, object bytes  | empty               |
//! | GET     | id u64 LE, delete u8     | object bytes        |
//! | DELETE  | id u64 LE                | empty               |
//! | EXECUTE | command bytes            | result id u64 LE    |

use crate::chain::Command;

use super::codec::{decode_error, deserialize_command, encode_error, serialize_command};
use super::{Message, MsgType, NetError, ObjectId};

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Store { id: ObjectId, bytes: Vec<u8> },
    Get { id: ObjectId, delete: bool },
    Delete { id: ObjectId },
    Execute(Command),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ack,
    Bytes(Vec<u8>),
    Id(ObjectId),
}

impl Request {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Request::Store { .. } => MsgType::Store,
            Request::Get { .. } => MsgType::Get,
            Request::Delete { .. } => MsgType::Delete,
            Request::Execute(_) => MsgType::Execute,
        }
    }

    pub fn to_message(&self, request_id: u64) -> Message {
        let payload = match self {
            Request::Store { id, bytes } => {
                let mut p = Vec::with_capacity(8 + bytes.len());
                p.extend_from_slice(&id.0.to_le_bytes());
                p.extend_from_slice(bytes);
                p
            }
            Request::Get { id, delete } => {
                let mut p = id.0.to_le_bytes().to_vec();
                p.push(*delete as u8);
                p
            }
            Request::Delete { id } => id.0.to_le_bytes().to_vec(),
            Request::Execute(cmd) => serialize_command(cmd),
        };
        Message::new(self.msg_type(), request_id, payload)
    }

    pub fn from_message(m: &Message) -> Result<Request, NetError> {
        let id_at = |p: &[u8]| -> Result<ObjectId, NetError> {
            p.get(..8)
                .map(|b| ObjectId(u64::from_le_bytes(b.try_into().expect("sized"))))
                .ok_or_else(|| NetError::Malformed("missing object id".into()))
        };
        let p = &m.payload;
        match m.kind() {
            Some(MsgType::Store) => Ok(Request::Store {
                id: id_at(p)?,
                bytes: p[8..].to_vec(),
            }),
            Some(MsgType::Get) => {
                if p.len() != 9 || p[8] > 1 {
                    return Err(NetError::Malformed("GET payload must be id + flag".into()));
                }
                Ok(Request::Get {
                    id: id_at(p)?,
                    delete: p[8] == 1,
                })
            }
            Some(MsgType::Delete) => {
                if p.len() != 8 {
                    return Err(NetError::Malformed("DELETE payload must be an id".into()));
                }
                Ok(Request::Delete { id: id_at(p)? })
            }
            Some(MsgType::Execute) => Ok(Request::Execute(deserialize_command(p)?)),
            Some(t) => Err(NetError::Malformed(format!("{t:?} is not a request type"))),
            None => Err(NetError::Malformed(format!(
                "unknown message type {}",
                m.msg_type
            ))),
        }
    }
}

impl Response {
    pub fn to_message(&self, request_id: u64) -> Message {
        let payload = match self {
            Response::Ack => Vec::new(),
            Response::Bytes(b) => b.clone(),
            Response::Id(id) => id.0.to_le_bytes().to_vec(),
        };
        Message::new(MsgType::Result, request_id, payload)
    }

    /// Interprets a reply frame to `req`.
    pub fn from_reply(req: &Request, reply: Message) -> Result<Response, NetError> {
        match reply.kind() {
            Some(MsgType::Result) => match req {
                Request::Store { .. } | Request::Delete { .. } => Ok(Response::Ack),
                Request::Get { .. } => Ok(Response::Bytes(reply.payload)),
                Request::Execute(_) => {
                    let raw: [u8; 8] = reply.payload.as_slice().try_into().map_err(|_| {
                        NetError::UnexpectedReply("EXECUTE result must be an id".into())
                    })?;
                    Ok(Response::Id(ObjectId(u64::from_le_bytes(raw))))
                }
            },
            Some(MsgType::Error) => {
                let (code, msg) = decode_error(&reply.payload)?;
                Err(NetError::from_code(code, msg))
            }
            _ => Err(NetError::UnexpectedReply(format!(
                "message type {}",
                reply.msg_type
            ))),
        }
    }
}

pub fn error_message(request_id: u64, err: &NetError) -> Message {
    Message::new(
        MsgType::Error,
        request_id,
        encode_error(err.code() as u32, &err.to_string()),
    )
}
