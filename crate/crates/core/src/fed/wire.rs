//! Length-prefixed binary frames exchanged between server and clients.
//!
//! ```text
//! u32 BE   payload length
//! u8       version (0x01)
//! u8       type: 0x01 update, 0x02 global model, 0x03 round begin
//! u32 BE   round
//! u32 BE   client id
//! u32 BE   actor count, then f64 LE values
//! u32 BE   critic count, then f64 LE values
//! ```
//!
//! Updates append the sample count as a u32 BE and global models append
//! the update counter as a u64 BE. Round-begin frames carry empty arrays.

use std::io::{Read, Write};

use crate::agent::{GradientUpdate, PolicyParams};
use crate::error::{Error, Result};

pub const VERSION: u8 = 0x01;
pub const TYPE_UPDATE: u8 = 0x01;
pub const TYPE_GLOBAL: u8 = 0x02;
pub const TYPE_ROUND_BEGIN: u8 = 0x03;
/// Largest payload a reader accepts.
pub const MAX_FRAME: usize = 256 << 20;

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Update(GradientUpdate),
    GlobalModel {
        round: u32,
        client: u32,
        iteration: u64,
        actor: Vec<f64>,
        critic: Vec<f64>,
    },
    RoundBegin {
        round: u32,
        client: u32,
    },
}

impl Message {
    pub fn global_model(round: u32, client: u32, params: &PolicyParams) -> Self {
        Message::GlobalModel {
            round,
            client,
            iteration: params.iteration,
            actor: params.actor.clone(),
            critic: params.critic.clone(),
        }
    }
}

fn put_array(out: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    let n = u32::try_from(values.len()).map_err(|_| Error::Protocol("array too long".into()))?;
    out.extend_from_slice(&n.to_be_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Encodes a message as a complete frame, length prefix included.
pub fn encode(msg: &Message) -> Result<Vec<u8>> {
    let mut body = vec![0u8; 4];
    body.push(VERSION);
    match msg {
        Message::Update(u) => {
            body.push(TYPE_UPDATE);
            body.extend_from_slice(&u.round.to_be_bytes());
            body.extend_from_slice(&u.client_id.to_be_bytes());
            put_array(&mut body, &u.actor)?;
            put_array(&mut body, &u.critic)?;
            body.extend_from_slice(&u.samples.to_be_bytes());
        }
        Message::GlobalModel {
            round,
            client,
            iteration,
            actor,
            critic,
        } => {
            body.push(TYPE_GLOBAL);
            body.extend_from_slice(&round.to_be_bytes());
            body.extend_from_slice(&client.to_be_bytes());
            put_array(&mut body, actor)?;
            put_array(&mut body, critic)?;
            body.extend_from_slice(&iteration.to_be_bytes());
        }
        Message::RoundBegin { round, client } => {
            body.push(TYPE_ROUND_BEGIN);
            body.extend_from_slice(&round.to_be_bytes());
            body.extend_from_slice(&client.to_be_bytes());
            put_array(&mut body, &[])?;
            put_array(&mut body, &[])?;
        }
    }
    let len = body.len() - 4;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!(
            "payload of {len} bytes exceeds the frame limit"
        )));
    }
    body[..4].copy_from_slice(&(len as u32).to_be_bytes());
    Ok(body)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Protocol(format!(
                "truncated frame while reading {what}"
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn array(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.u32(what)? as usize;
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::Protocol(format!(
                "{what} count {n} overruns the frame"
            )));
        }
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decodes one payload (the bytes after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<Message> {
    let mut c = Cursor {
        buf: payload,
        pos: 0,
    };
    let version = c.u8("version")?;
    if version != VERSION {
        return Err(Error::Protocol(format!(
            "unsupported version {version:#04x}"
        )));
    }
    let kind = c.u8("message type")?;
    let round = c.u32("round")?;
    let client = c.u32("client id")?;
    let actor = c.array("actor gradient")?;
    let critic = c.array("critic gradient")?;
    let msg = match kind {
        TYPE_UPDATE => {
            let samples = c.u32("sample count")?;
            Message::Update(GradientUpdate {
                client_id: client,
                round,
                samples,
                actor,
                critic,
            })
        }
        TYPE_GLOBAL => {
            let iteration = c.u64("iteration")?;
            Message::GlobalModel {
                round,
                client,
                iteration,
                actor,
                critic,
            }
        }
        TYPE_ROUND_BEGIN => {
            if !actor.is_empty() || !critic.is_empty() {
                return Err(Error::Protocol(
                    "round-begin frame carries parameters".into(),
                ));
            }
            Message::RoundBegin { round, client }
        }
        other => {
            return Err(Error::Protocol(format!(
                "unknown message type {other:#04x}"
            )))
        }
    };
    if c.pos != payload.len() {
        return Err(Error::Protocol(format!(
            "{} trailing bytes in frame",
            payload.len() - c.pos
        )));
    }
    Ok(msg)
}

/// Decodes a complete frame, length prefix included.
pub fn decode(frame: &[u8]) -> Result<Message> {
    if frame.len() < 4 {
        return Err(Error::Protocol(
            "truncated frame while reading length".into(),
        ));
    }
    let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!(
            "declared length {len} exceeds the frame limit"
        )));
    }
    if frame.len() - 4 != len {
        return Err(Error::Protocol(format!(
            "declared length {len} but {} payload bytes",
            frame.len() - 4
        )));
    }
    decode_payload(&frame[4..])
}

pub fn encode_update(update: &GradientUpdate) -> Result<Vec<u8>> {
    encode(&Message::Update(update.clone()))
}

pub fn decode_update(frame: &[u8]) -> Result<GradientUpdate> {
    match decode(frame)? {
        Message::Update(u) => Ok(u),
        other => Err(Error::Protocol(format!(
            "expected an update, got {}",
            kind_name(&other)
        ))),
    }
}

fn kind_name(msg: &Message) -> &'static str {
    match msg {
        Message::Update(_) => "update",
        Message::GlobalModel { .. } => "global model",
        Message::RoundBegin { .. } => "round begin",
    }
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&encode(msg)?)?;
    w.flush()?;
    Ok(())
}

pub fn read_message<R: Read>(r: &mut R) -> Result<Message> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!(
            "declared length {len} exceeds the frame limit"
        )));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    decode_payload(&payload)
}
