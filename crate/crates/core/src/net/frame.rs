//! Length-prefixed binary frames.
//!
//! ```text
//! magic "FTNS" | version u8 = 1 | msg_type u8 | request_id u64 LE | payload_len u64 LE | payload
//! ```

use std::io::{self, Read, Write};

use super::NetError;

pub const MAGIC: [u8; 4] = *b"FTNS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
/// Frames larger than this are refused and the connection is dropped.
pub const MAX_PAYLOAD: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Store = 1,
    Get = 2,
    Delete = 3,
    Execute = 4,
    Result = 5,
    Error = 6,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<MsgType> {
        Some(match b {
            1 => MsgType::Store,
            2 => MsgType::Get,
            3 => MsgType::Delete,
            4 => MsgType::Execute,
            5 => MsgType::Result,
            6 => MsgType::Error,
            _ => return None,
        })
    }
}

/// A decoded frame. `msg_type` stays raw so unknown types can be answered in-band.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: u8,
    pub request_id: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(msg_type: MsgType, request_id: u64, payload: Vec<u8>) -> Self {
        Message {
            msg_type: msg_type as u8,
            request_id,
            payload,
        }
    }

    pub fn kind(&self) -> Option<MsgType> {
        MsgType::from_u8(self.msg_type)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.request_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one complete frame.
    pub fn decode(bytes: &[u8]) -> Result<Message, NetError> {
        if bytes.len() < HEADER_LEN {
            return Err(NetError::Malformed(format!(
                "frame of {} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let header = Header::parse(bytes[..HEADER_LEN].try_into().expect("sized slice"));
        header.check()?;
        let body = &bytes[HEADER_LEN..];
        if body.len() as u64 != header.payload_len {
            return Err(NetError::Malformed(format!(
                "payload length {} does not match header {}",
                body.len(),
                header.payload_len
            )));
        }
        Ok(Message {
            msg_type: header.msg_type,
            request_id: header.request_id,
            payload: body.to_vec(),
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Header {
    pub magic: [u8; 4],
    pub version: u8,
    pub msg_type: u8,
    pub request_id: u64,
    pub payload_len: u64,
}

impl Header {
    pub fn parse(b: &[u8; HEADER_LEN]) -> Header {
        Header {
            magic: b[0..4].try_into().expect("sized"),
            version: b[4],
            msg_type: b[5],
            request_id: u64::from_le_bytes(b[6..14].try_into().expect("sized")),
            payload_len: u64::from_le_bytes(b[14..22].try_into().expect("sized")),
        }
    }

    pub fn check(&self) -> Result<(), NetError> {
        if self.magic != MAGIC {
            return Err(NetError::Malformed(format!(
                "bad magic {:02x?}",
                self.magic
            )));
        }
        if self.version != VERSION {
            return Err(NetError::Malformed(format!(
                "unsupported protocol version {}",
                self.version
            )));
        }
        Ok(())
    }
}

/// Outcome of reading one frame off a stream.
#[derive(Debug)]
pub enum ReadOutcome {
    Frame(Message),
    /// Header parsed and payload consumed, but the frame is not valid.
    /// The stream is still aligned on the next frame.
    Invalid {
        request_id: u64,
        reason: String,
    },
    Closed,
}

/// Reads one frame. Oversized payloads are a hard error since the stream
/// cannot be resynchronised without reading them.
pub fn read_frame(r: &mut impl Read) -> Result<ReadOutcome, NetError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(ReadOutcome::Closed),
            Ok(0) => {
                return Err(NetError::Transport(
                    "connection closed mid-header".to_string(),
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let header = Header::parse(&header);
    if header.payload_len > MAX_PAYLOAD {
        return Err(NetError::Malformed(format!(
            "payload of {} bytes exceeds limit",
            header.payload_len
        )));
    }
    let mut payload = vec![0u8; header.payload_len as usize];
    r.read_exact(&mut payload)?;
    if let Err(e) = header.check() {
        return Ok(ReadOutcome::Invalid {
            request_id: header.request_id,
            reason: e.to_string(),
        });
    }
    Ok(ReadOutcome::Frame(Message {
        msg_type: header.msg_type,
        request_id: header.request_id,
        payload,
    }))
}
