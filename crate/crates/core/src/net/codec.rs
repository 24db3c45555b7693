//! Byte layouts for payloads carried inside frames.
//!
//! Tensor: `dtype u8 (0=Float64, 1=Ring64) | ndim u8 | dims u32 LE each | elements 8 bytes LE each`.
//! Stored object: `kind u8 (0=plain, 1=fixed) | [frac_bits u8 if fixed] | tensor`.
//! Command: `result_id u64 | name (u16 len) | n_args u16 | args | n_kwargs u16 | (key (u16 len), literal)*`,
//! where each argument is `tag u8 (0=object u64, 1=int i64, 2=float f64, 3=str u32 len + utf8)`.

use crate::chain::{Arg, Command, LocalObject};
use crate::fixedpoint::FixedPointConfig;
use crate::tensor::{DType, Data, Shape, Tensor};

use super::{NetError, ObjectId};

pub fn serialize_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + 4 * t.dims().len() + 8 * t.numel());
    write_tensor(&mut out, t);
    out
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.push(match t.dtype() {
        DType::Float64 => 0,
        DType::Ring64 => 1,
    });
    out.push(t.dims().len() as u8);
    for &d in t.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t.data() {
        Data::Float(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
        Data::Ring(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
}

pub fn deserialize_tensor(bytes: &[u8]) -> Result<Tensor, NetError> {
    let mut r = Reader::new(bytes);
    let t = r.tensor()?;
    r.finish()?;
    Ok(t)
}

pub fn serialize_object(obj: &LocalObject) -> Vec<u8> {
    let t = obj.tensor();
    let mut out = Vec::with_capacity(4 + 4 * t.dims().len() + 8 * t.numel());
    match obj {
        LocalObject::Plain(t) => {
            out.push(0);
            write_tensor(&mut out, t);
        }
        LocalObject::Fixed { cfg, payload } => {
            out.push(1);
            out.push(cfg.frac_bits() as u8);
            write_tensor(&mut out, payload);
        }
    }
    out
}

pub fn deserialize_object(bytes: &[u8]) -> Result<LocalObject, NetError> {
    let mut r = Reader::new(bytes);
    let obj = match r.u8()? {
        0 => LocalObject::Plain(r.tensor()?),
        1 => {
            let bits = r.u8()? as u32;
            let cfg =
                FixedPointConfig::new(bits).map_err(|e| NetError::Malformed(e.to_string()))?;
            let payload = r.tensor()?;
            if payload.dtype() != DType::Ring64 {
                return Err(NetError::Malformed(
                    "fixed-precision object must wrap a ring tensor".into(),
                ));
            }
            LocalObject::Fixed { cfg, payload }
        }
        k => return Err(NetError::Malformed(format!("unknown object kind {k}"))),
    };
    r.finish()?;
    Ok(obj)
}

pub fn serialize_command(cmd: &Command) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&cmd.result_id.0.to_le_bytes());
    write_str16(&mut out, &cmd.name);
    out.extend_from_slice(&(cmd.args.len() as u16).to_le_bytes());
    for a in &cmd.args {
        write_arg(&mut out, a);
    }
    out.extend_from_slice(&(cmd.kwargs.len() as u16).to_le_bytes());
    for (k, v) in &cmd.kwargs {
        write_str16(&mut out, k);
        write_arg(&mut out, v);
    }
    out
}

pub fn deserialize_command(bytes: &[u8]) -> Result<Command, NetError> {
    let mut r = Reader::new(bytes);
    let result_id = ObjectId(r.u64()?);
    let name = r.str16()?;
    let n_args = r.u16()?;
    let args = (0..n_args)
        .map(|_| r.arg())
        .collect::<Result<Vec<_>, _>>()?;
    let n_kwargs = r.u16()?;
    let mut kwargs = Vec::with_capacity(n_kwargs as usize);
    for _ in 0..n_kwargs {
        let key = r.str16()?;
        let value = r.arg()?;
        if !value.is_literal() {
            return Err(NetError::Malformed(format!(
                "keyword argument {key} must be a literal"
            )));
        }
        kwargs.push((key, value));
    }
    r.finish()?;
    Ok(Command {
        name,
        args,
        kwargs,
        result_id,
    })
}

fn write_str16(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn write_arg(out: &mut Vec<u8>, a: &Arg) {
    match a {
        Arg::Object(id) => {
            out.push(0);
            out.extend_from_slice(&id.0.to_le_bytes());
        }
        Arg::Int(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_le_bytes());
        }
        Arg::Float(v) => {
            out.push(2);
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        Arg::Str(s) => {
            out.push(3);
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
    }
}

/// `u32 LE code | UTF-8 message`.
pub fn encode_error(code: u32, message: &str) -> Vec<u8> {
    let mut out = code.to_le_bytes().to_vec();
    out.extend_from_slice(message.as_bytes());
    out
}

pub fn decode_error(bytes: &[u8]) -> Result<(u32, String), NetError> {
    if bytes.len() < 4 {
        return Err(NetError::Malformed("short error payload".into()));
    }
    let code = u32::from_le_bytes(bytes[..4].try_into().expect("sized"));
    let msg = String::from_utf8_lossy(&bytes[4..]).into_owned();
    Ok((code, msg))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(NetError::Malformed(format!(
                "buffer too short: need {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn u8(&mut self) -> Result<u8, NetError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, NetError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("sized")))
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("sized")))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }

    fn utf8(&mut self, n: usize) -> Result<String, NetError> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| NetError::Malformed("invalid utf-8".into()))
    }

    fn str16(&mut self) -> Result<String, NetError> {
        let n = self.u16()? as usize;
        self.utf8(n)
    }

    fn arg(&mut self) -> Result<Arg, NetError> {
        Ok(match self.u8()? {
            0 => Arg::Object(ObjectId(self.u64()?)),
            1 => Arg::Int(self.u64()? as i64),
            2 => Arg::Float(f64::from_bits(self.u64()?)),
            3 => {
                let n = self.u32()? as usize;
                Arg::Str(self.utf8(n)?)
            }
            t => return Err(NetError::Malformed(format!("unknown argument tag {t}"))),
        })
    }

    fn tensor(&mut self) -> Result<Tensor, NetError> {
        let dtype = match self.u8()? {
            0 => DType::Float64,
            1 => DType::Ring64,
            d => return Err(NetError::Malformed(format!("unknown dtype {d}"))),
        };
        let ndim = self.u8()? as usize;
        let dims = (0..ndim)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| NetError::Malformed("element count overflows".into()))?;
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| NetError::Malformed("element count overflows".into()))?,
        )?;
        let words = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("sized")));
        let shape = Shape::new(dims);
        let t = match dtype {
            DType::Float64 => Tensor::from_f64(shape, words.map(f64::from_bits).collect()),
            DType::Ring64 => Tensor::from_ring(shape, words.collect()),
        };
        t.map_err(|e| NetError::Malformed(e.to_string()))
    }

    fn finish(&self) -> Result<(), NetError> {
        if self.pos != self.buf.len() {
            return Err(NetError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
