//! Length-prefixed binary framing for the deployment channel.
//!
//! Frame layout on the wire:
//!
//! ```text
//! +---------------+--------------+--------------+------------------+
//! | length (u32)  | type (1 B)   | suite (1 B)  | payload          |
//! | big-endian    | 0x01..0x04   | 0x01..0x02   | variable         |
//! +---------------+--------------+--------------+------------------+
//! ```
//!
//! The length counts everything after itself. Payload fields are
//! length-prefixed byte strings (u16 big-endian) in wire order; digests
//! are computed over the concatenation of those length-prefixed fields.
//! Parsing is strict: exact field count, no trailing bytes.

use std::io::{Read, Write};

use super::ProtocolError;

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME: u32 = 1 << 20;

pub const TYPE_REGISTRATION_REQUEST: u8 = 0x01;
pub const TYPE_REPLY: u8 = 0x02;
pub const TYPE_FURTHER: u8 = 0x03;
pub const TYPE_ACK: u8 = 0x04;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub suite: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let body_len = 2 + self.payload.len();
        let mut out = Vec::with_capacity(4 + body_len);
        out.extend_from_slice(&(body_len as u32).to_be_bytes());
        out.push(self.msg_type);
        out.push(self.suite);
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn write_frame(writer: &mut impl Write, frame: &Frame) -> Result<(), ProtocolError> {
    writer.write_all(&frame.to_bytes())?;
    writer.flush()?;
    Ok(())
}

pub fn read_frame(reader: &mut impl Read) -> Result<Frame, ProtocolError> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf)?;
    let length = u32::from_be_bytes(len_buf);
    if length > MAX_FRAME {
        return Err(ProtocolError::FrameTooLarge(length));
    }
    if length < 2 {
        return Err(ProtocolError::Malformed("frame shorter than header"));
    }
    let mut body = vec![0u8; length as usize];
    reader.read_exact(&mut body)?;
    Ok(Frame {
        msg_type: body[0],
        suite: body[1],
        payload: body[2..].to_vec(),
    })
}

/// Length-prefixes each field and concatenates, the exact byte layout
/// both the payload and the field digests are computed over.
pub fn encode_fields(fields: &[&[u8]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(fields.iter().map(|f| 2 + f.len()).sum());
    for field in fields {
        debug_assert!(field.len() <= u16::MAX as usize, "field exceeds u16 length");
        out.extend_from_slice(&(field.len() as u16).to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

/// Strict inverse of `encode_fields`: exactly `expected` fields and not
/// a byte more.
pub fn decode_fields(payload: &[u8], expected: usize) -> Result<Vec<Vec<u8>>, ProtocolError> {
    let mut fields = Vec::with_capacity(expected);
    let mut rest = payload;
    for _ in 0..expected {
        if rest.len() < 2 {
            return Err(ProtocolError::Malformed("truncated field length"));
        }
        let len = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        rest = &rest[2..];
        if rest.len() < len {
            return Err(ProtocolError::Malformed("field overruns payload"));
        }
        fields.push(rest[..len].to_vec());
        rest = &rest[len..];
    }
    if !rest.is_empty() {
        return Err(ProtocolError::Malformed("trailing bytes after fields"));
    }
    Ok(fields)
}
