//! Frame codec. Layout (all integers big-endian):
//!
//! ```text
//! u32  total frame length, including this field
//! u16  event-type length, then that many UTF-8 bytes
//! [16] correlation id
//! u64  published-at, simulated milliseconds
//! fields until end of frame: u16 tag, u8 wire kind, value
//!   U64/I64/F64: 8 bytes   Bool: 1 byte (0 or 1)
//!   Str/Bytes:   u32 length + bytes
//! ```

use citytb_core::SimTime;
use thiserror::Error;

use crate::event::{CorrelationId, ManagementEvent};
use crate::payload::{Payload, Value, WireKind};
use crate::registry;

pub const HEADER_MIN: usize = 4 + 2 + 16 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("frame truncated")]
    Truncated,
    #[error("frame length {declared} does not match {actual} bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("frame has no event type")]
    Typeless,
    #[error("unknown event type {0:?}")]
    UnknownEventType(String),
    #[error("event type is not UTF-8")]
    BadUtf8,
    #[error("unknown wire kind {0}")]
    BadWireKind(u8),
    #[error("field {tag} of {event_type} has the wrong wire kind")]
    SchemaMismatch { event_type: String, tag: u16 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("unknown event type {0:?}")]
    UnknownEventType(String),
    #[error("field {tag} of {event_type} has the wrong wire kind")]
    SchemaMismatch { event_type: String, tag: u16 },
}

fn check_schema(event_type: &str, fields: &[(u16, Value)]) -> Result<(), (String, u16)> {
    let spec = registry::lookup(event_type).ok_or_else(|| (event_type.to_string(), 0))?;
    for (tag, value) in fields {
        if let Some((_, kind)) = spec.fields.iter().find(|(t, _)| t == tag) {
            if *kind != value.kind() {
                return Err((event_type.to_string(), *tag));
            }
        }
    }
    Ok(())
}

pub fn encode_event(ev: &ManagementEvent) -> Result<Vec<u8>, EncodeError> {
    if registry::lookup(&ev.event_type).is_none() {
        return Err(EncodeError::UnknownEventType(ev.event_type.clone()));
    }
    check_schema(&ev.event_type, &ev.payload.fields)
        .map_err(|(event_type, tag)| EncodeError::SchemaMismatch { event_type, tag })?;
    Ok(encode_unchecked(ev))
}

/// Encodes without consulting the registry.
pub fn encode_unchecked(ev: &ManagementEvent) -> Vec<u8> {
    let mut out = vec![0u8; 4];
    out.extend_from_slice(&(ev.event_type.len() as u16).to_be_bytes());
    out.extend_from_slice(ev.event_type.as_bytes());
    out.extend_from_slice(&ev.correlation_id.0);
    out.extend_from_slice(&ev.published_at.as_millis().to_be_bytes());
    for (tag, value) in &ev.payload.fields {
        out.extend_from_slice(&tag.to_be_bytes());
        out.push(value.kind() as u8);
        match value {
            Value::U64(v) => out.extend_from_slice(&v.to_be_bytes()),
            Value::I64(v) => out.extend_from_slice(&v.to_be_bytes()),
            Value::F64(v) => out.extend_from_slice(&v.to_bits().to_be_bytes()),
            Value::Bool(v) => out.push(*v as u8),
            Value::Str(s) => {
                out.extend_from_slice(&(s.len() as u32).to_be_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            Value::Bytes(b) => {
                out.extend_from_slice(&(b.len() as u32).to_be_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    let len = out.len() as u32;
    out[..4].copy_from_slice(&len.to_be_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn decode_event(frame: &[u8]) -> Result<ManagementEvent, DecodeError> {
    if frame.len() < 4 {
        return Err(DecodeError::Truncated);
    }
    let declared = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
    if declared != frame.len() {
        return Err(if declared > frame.len() {
            DecodeError::Truncated
        } else {
            DecodeError::LengthMismatch {
                declared,
                actual: frame.len(),
            }
        });
    }
    let mut r = Reader { buf: frame, pos: 4 };
    let type_len = r.u16()? as usize;
    if type_len == 0 {
        return Err(DecodeError::Typeless);
    }
    let event_type = std::str::from_utf8(r.take(type_len)?)
        .map_err(|_| DecodeError::BadUtf8)?
        .to_string();
    if registry::lookup(&event_type).is_none() {
        return Err(DecodeError::UnknownEventType(event_type));
    }
    let correlation_id = CorrelationId(r.take(16)?.try_into().unwrap());
    let published_at = SimTime(r.u64()?);
    let mut fields = Vec::new();
    while !r.done() {
        let tag = r.u16()?;
        let kind_byte = r.take(1)?[0];
        let kind = WireKind::from_u8(kind_byte).ok_or(DecodeError::BadWireKind(kind_byte))?;
        let value = match kind {
            WireKind::U64 => Value::U64(r.u64()?),
            WireKind::I64 => Value::I64(r.u64()? as i64),
            WireKind::F64 => Value::F64(f64::from_bits(r.u64()?)),
            WireKind::Bool => match r.take(1)?[0] {
                0 => Value::Bool(false),
                1 => Value::Bool(true),
                b => return Err(DecodeError::BadWireKind(b)),
            },
            WireKind::Str => {
                let n = r.u32()? as usize;
                Value::Str(
                    std::str::from_utf8(r.take(n)?)
                        .map_err(|_| DecodeError::BadUtf8)?
                        .to_string(),
                )
            }
            WireKind::Bytes => {
                let n = r.u32()? as usize;
                Value::Bytes(r.take(n)?.to_vec())
            }
        };
        fields.push((tag, value));
    }
    check_schema(&event_type, &fields)
        .map_err(|(event_type, tag)| DecodeError::SchemaMismatch { event_type, tag })?;
    Ok(ManagementEvent {
        event_type,
        correlation_id,
        published_at,
        payload: Payload { fields },
    })
}

/// Reads one length-prefixed frame from a stream.
pub fn read_frame(r: &mut impl std::io::Read) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n < 4 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            "frame shorter than its length field",
        ));
    }
    let mut buf = vec![0u8; n];
    buf[..4].copy_from_slice(&len);
    r.read_exact(&mut buf[4..])?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{tags, NODE_REG_REQUEST};

    fn sample() -> ManagementEvent {
        ManagementEvent::new(
            NODE_REG_REQUEST,
            CorrelationId::derive("gw01", 7),
            SimTime(1234),
            Payload::new().with_str(tags::URN, "urn:a:b:c"),
        )
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = encode_event(&sample()).unwrap();
        let type_len = NODE_REG_REQUEST.len();
        // header + one Str field of 9 bytes
        assert_eq!(bytes.len(), HEADER_MIN + type_len + 2 + 1 + 4 + 9);
        assert_eq!(&bytes[..4], &(bytes.len() as u32).to_be_bytes());
        assert_eq!(&bytes[4..6], &(type_len as u16).to_be_bytes());
        assert_eq!(&bytes[6..6 + type_len], NODE_REG_REQUEST.as_bytes());
        let ts = 6 + type_len + 16;
        assert_eq!(&bytes[ts..ts + 8], &1234u64.to_be_bytes());
        assert_eq!(&bytes[ts + 8..ts + 11], &[0, 1, 4]);
    }

    #[test]
    fn unknown_type_and_truncation() {
        let mut ev = sample();
        ev.event_type = "NOT_A_TYPE".into();
        let bytes = encode_unchecked(&ev);
        assert_eq!(
            decode_event(&bytes),
            Err(DecodeError::UnknownEventType("NOT_A_TYPE".into()))
        );
        let bytes = encode_event(&sample()).unwrap();
        assert_eq!(decode_event(&bytes[..10]), Err(DecodeError::Truncated));
        let mut typeless = bytes.clone();
        typeless[4..6].copy_from_slice(&[0, 0]);
        assert_eq!(decode_event(&typeless), Err(DecodeError::Typeless));
    }

    #[test]
    fn wrong_kind_for_known_tag_is_rejected() {
        let mut ev = sample();
        ev.payload.set(tags::URN, Value::U64(3));
        assert!(matches!(encode_event(&ev), Err(EncodeError::SchemaMismatch { .. })));
        assert!(matches!(
            decode_event(&encode_unchecked(&ev)),
            Err(DecodeError::SchemaMismatch { tag: 1, .. })
        ));
    }
}
