//! Multiplexes per-node virtual connections over one physical link.
//!
//! Frame layout, all integers big-endian:
//!
//! ```text
//! session u32 | seq u32 | payload_len u32 | urn_len u16 | urn | payload
//! ```
//!
//! so the header costs 14 bytes plus the URN. `seq` counts frames per
//! (session, node) and direction, starting at 0.

use std::collections::HashMap;

use citytb_core::Urn;
use thiserror::Error;

pub const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverlayError {
    #[error("frame truncated")]
    Truncated,
    #[error("bad URN in frame header")]
    BadUrn,
    #[error("{urn} is not owned by session {session}")]
    Misrouted { session: u32, urn: Urn },
    #[error("{urn}: expected seq {expected}, got {got}")]
    OutOfOrder { urn: Urn, expected: u32, got: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub session: u32,
    pub seq: u32,
    pub urn: Urn,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let urn = self.urn.to_string();
        let mut out = Vec::with_capacity(HEADER_LEN + urn.len() + self.payload.len());
        out.extend_from_slice(&self.session.to_be_bytes());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&(urn.len() as u16).to_be_bytes());
        out.extend_from_slice(urn.as_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the front of `buf`, returning it and the bytes
    /// consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), OverlayError> {
        if buf.len() < HEADER_LEN {
            return Err(OverlayError::Truncated);
        }
        let u32_at = |i: usize| u32::from_be_bytes(buf[i..i + 4].try_into().unwrap());
        let session = u32_at(0);
        let seq = u32_at(4);
        let plen = u32_at(8) as usize;
        let ulen = u16::from_be_bytes([buf[12], buf[13]]) as usize;
        let total = HEADER_LEN + ulen + plen;
        if buf.len() < total {
            return Err(OverlayError::Truncated);
        }
        let urn = std::str::from_utf8(&buf[HEADER_LEN..HEADER_LEN + ulen])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(OverlayError::BadUrn)?;
        Ok((
            Frame {
                session,
                seq,
                urn,
                payload: buf[HEADER_LEN + ulen..total].to_vec(),
            },
            total,
        ))
    }
}

/// One end-to-end physical link: a gateway's backhaul, or a vehicle's GPRS
/// connection. Both ends share the ownership table.
#[derive(Debug, Default)]
pub struct OverlayLink {
    owners: HashMap<Urn, u32>,
    next_down: HashMap<(u32, Urn), u32>,
    expect_down: HashMap<(u32, Urn), u32>,
    next_up: HashMap<(u32, Urn), u32>,
    expect_up: HashMap<(u32, Urn), u32>,
    pub bytes_down: u64,
    pub bytes_up: u64,
}

impl OverlayLink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn attach(&mut self, session: u32, urn: Urn) {
        self.owners.insert(urn, session);
    }

    pub fn detach(&mut self, urn: &Urn) {
        self.owners.remove(urn);
    }

    pub fn owner(&self, urn: &Urn) -> Option<u32> {
        self.owners.get(urn).copied()
    }

    /// Portal side: wraps a payload for `urn`.
    pub fn mux_down(&mut self, session: u32, urn: &Urn, payload: &[u8]) -> Vec<u8> {
        let seq = self.next_down.entry((session, urn.clone())).or_insert(0);
        let frame = Frame {
            session,
            seq: *seq,
            urn: urn.clone(),
            payload: payload.to_vec(),
        };
        *seq += 1;
        let bytes = frame.encode();
        self.bytes_down += bytes.len() as u64;
        bytes
    }

    /// Gateway side: unwraps a downlink frame, refusing frames for nodes the
    /// session does not own and frames out of order.
    pub fn demux_down(&mut self, bytes: &[u8]) -> Result<Frame, OverlayError> {
        let (f, _) = Frame::decode(bytes)?;
        if self.owner(&f.urn) != Some(f.session) {
            return Err(OverlayError::Misrouted {
                session: f.session,
                urn: f.urn,
            });
        }
        check_seq(&mut self.expect_down, &f)?;
        Ok(f)
    }

    /// Gateway side: tags node output with its owning session. Output from
    /// nodes no session owns is dropped.
    pub fn mux_up(&mut self, urn: &Urn, payload: &[u8]) -> Option<Vec<u8>> {
        let session = self.owner(urn)?;
        let seq = self.next_up.entry((session, urn.clone())).or_insert(0);
        let frame = Frame {
            session,
            seq: *seq,
            urn: urn.clone(),
            payload: payload.to_vec(),
        };
        *seq += 1;
        let bytes = frame.encode();
        self.bytes_up += bytes.len() as u64;
        Some(bytes)
    }

    /// Portal side: routes an uplink frame to its session.
    pub fn demux_up(&mut self, bytes: &[u8]) -> Result<Frame, OverlayError> {
        let (f, _) = Frame::decode(bytes)?;
        if self.owner(&f.urn) != Some(f.session) {
            return Err(OverlayError::Misrouted {
                session: f.session,
                urn: f.urn,
            });
        }
        check_seq(&mut self.expect_up, &f)?;
        Ok(f)
    }
}

fn check_seq(expect: &mut HashMap<(u32, Urn), u32>, f: &Frame) -> Result<(), OverlayError> {
    let e = expect.entry((f.session, f.urn.clone())).or_insert(0);
    if *e != f.seq {
        return Err(OverlayError::OutOfOrder {
            urn: f.urn.clone(),
            expected: *e,
            got: f.seq,
        });
    }
    *e += 1;
    Ok(())
}
