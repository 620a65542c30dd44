use std::fmt;

use citytb_core::SimTime;

use crate::payload::Payload;
use crate::registry::{self, Channel, Kind, Topic};

/// 16-byte id linking a reply to its request.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct CorrelationId(pub [u8; 16]);

impl CorrelationId {
    /// Deterministic id from an origin name and a per-origin counter.
    pub fn derive(origin: &str, seq: u64) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in origin.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        let mut out = [0u8; 16];
        out[..8].copy_from_slice(&h.to_be_bytes());
        out[8..].copy_from_slice(&seq.to_be_bytes());
        CorrelationId(out)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 32 || !s.is_ascii() {
            return None;
        }
        let mut out = [0u8; 16];
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
        }
        Some(CorrelationId(out))
    }
}

impl fmt::Debug for CorrelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cid:{}", self.to_hex())
    }
}

impl fmt::Display for CorrelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagementEvent {
    pub event_type: String,
    pub correlation_id: CorrelationId,
    pub published_at: SimTime,
    pub payload: Payload,
}

impl ManagementEvent {
    pub fn new(
        event_type: &str,
        correlation_id: CorrelationId,
        published_at: SimTime,
        payload: Payload,
    ) -> Self {
        ManagementEvent {
            event_type: event_type.to_string(),
            correlation_id,
            published_at,
            payload,
        }
    }

    /// Builds the reply to this request, reusing its correlation id.
    pub fn reply(&self, at: SimTime, payload: Payload) -> Option<ManagementEvent> {
        let reply = registry::reply_for(&self.event_type)?;
        Some(ManagementEvent::new(reply, self.correlation_id, at, payload))
    }

    pub fn topic(&self) -> Option<Topic> {
        registry::lookup(&self.event_type).map(|s| s.topic)
    }

    pub fn channel(&self) -> Option<Channel> {
        self.topic().map(|t| t.channel)
    }

    pub fn kind(&self) -> Option<Kind> {
        self.topic().map(|t| t.kind)
    }
}
