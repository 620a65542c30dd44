//! Canonical text encoding of resource descriptions.
//!
//! One `key=value` per line, keys in this fixed order:
//!
//! ```text
//! urn=urn:smartsantander:santander:lp0001
//! role=experimentation
//! state=active
//! capability=temperature;celsius;0.5     (repeatable; accuracy optional)
//! position=43.4621,-3.8103               (or `mobile`)
//! parent-gateway=urn:...                 (omitted when absent)
//! connection.type=mesh
//! connection.address=0013A2004F1C2D3E
//! hw.<key>=<value>                       (repeatable, sorted by key)
//! registered-at=120000
//! last-seen=180000
//! ```
//!
//! Values escape `\` as `\\` and newlines as `\n`. Numbers use the shortest
//! representation that reads back exactly, so encoding is a bijection.

use std::collections::BTreeMap;
use std::fmt::Write;

use citytb_core::{
    Capability, Connection, GeoPoint, NodeState, Position, ResourceDescription,
    SimTime, Urn,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("document line {line}: {msg}")]
pub struct DocError {
    pub line: usize,
    pub msg: String,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn position_text(p: &Position) -> String {
    match p {
        Position::Fixed(g) => format!("{},{}", g.lat, g.lon),
        Position::Mobile => "mobile".into(),
    }
}

fn parse_position(v: &str) -> Result<Position, String> {
    if v == "mobile" {
        return Ok(Position::Mobile);
    }
    let (lat, lon) = v.split_once(',').ok_or("position is lat,lon or mobile")?;
    Ok(Position::Fixed(GeoPoint::new(
        lat.parse().map_err(|_| format!("bad latitude {lat:?}"))?,
        lon.parse().map_err(|_| format!("bad longitude {lon:?}"))?,
    )))
}

fn capability_text(c: &Capability) -> String {
    let mut s = format!("{};{}", escape(&c.phenomenon), escape(&c.unit));
    if let Some(a) = c.accuracy {
        let _ = write!(s, ";{a}");
    }
    s
}

fn parse_capability(v: &str) -> Result<Capability, String> {
    let parts: Vec<&str> = v.split(';').collect();
    let (p, u, a) = match parts.as_slice() {
        [p, u] => (p, u, None),
        [p, u, a] => (p, u, Some(a.parse().map_err(|_| format!("bad accuracy {a:?}"))?)),
        _ => return Err("capability is phenomenon;unit[;accuracy]".into()),
    };
    Ok(Capability {
        phenomenon: unescape(p),
        unit: unescape(u),
        accuracy: a,
    })
}

pub fn encode(d: &ResourceDescription) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "urn={}", d.urn);
    let _ = writeln!(s, "role={}", d.role);
    let _ = writeln!(s, "state={}", d.state);
    for c in &d.capabilities {
        let _ = writeln!(s, "capability={}", capability_text(c));
    }
    let _ = writeln!(s, "position={}", position_text(&d.position));
    if let Some(gw) = &d.parent_gateway {
        let _ = writeln!(s, "parent-gateway={gw}");
    }
    let _ = writeln!(s, "connection.type={}", d.connection.kind);
    let _ = writeln!(s, "connection.address={}", escape(&d.connection.address));
    for (k, v) in &d.hw_meta {
        let _ = writeln!(s, "hw.{}={}", escape(k), escape(v));
    }
    let _ = writeln!(s, "registered-at={}", d.registered_at.as_millis());
    let _ = writeln!(s, "last-seen={}", d.last_seen.as_millis());
    s
}

fn lines(text: &str) -> impl Iterator<Item = (usize, Result<(&str, &str), DocError>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        if l.trim().is_empty() {
            return None;
        }
        Some((
            i + 1,
            l.split_once('=').ok_or(DocError {
                line: i + 1,
                msg: "expected key=value".into(),
            }),
        ))
    })
}

pub fn decode(text: &str) -> Result<ResourceDescription, DocError> {
    let mut urn = None;
    let mut role = None;
    let mut state = None;
    let mut capabilities = Vec::new();
    let mut position = None;
    let mut parent_gateway = None;
    let mut kind = None;
    let mut address = None;
    let mut hw_meta = BTreeMap::new();
    let mut registered_at = None;
    let mut last_seen = None;
    for (line, kv) in lines(text) {
        let (k, v) = kv?;
        let err = |msg: String| DocError { line, msg };
        match k {
            "urn" => urn = Some(Urn::parse(v).map_err(|e| err(e.to_string()))?),
            "role" => role = Some(v.parse().map_err(|e| err(format!("{e}")))?),
            "state" => state = Some(v.parse().map_err(|e| err(format!("{e}")))?),
            "capability" => capabilities.push(parse_capability(v).map_err(err)?),
            "position" => position = Some(parse_position(v).map_err(err)?),
            "parent-gateway" => {
                parent_gateway = Some(Urn::parse(v).map_err(|e| err(e.to_string()))?)
            }
            "connection.type" => kind = Some(v.parse().map_err(|e| err(format!("{e}")))?),
            "connection.address" => address = Some(unescape(v)),
            "registered-at" => {
                registered_at = Some(SimTime(v.parse().map_err(|_| err("bad timestamp".into()))?))
            }
            "last-seen" => {
                last_seen = Some(SimTime(v.parse().map_err(|_| err("bad timestamp".into()))?))
            }
            other => match other.strip_prefix("hw.") {
                Some(key) if !key.is_empty() => {
                    hw_meta.insert(unescape(key), unescape(v));
                }
                _ => return Err(err(format!("unknown key {other:?}"))),
            },
        }
    }
    let missing = |what: &str| DocError {
        line: 0,
        msg: format!("missing {what}"),
    };
    let registered_at = registered_at.unwrap_or_default();
    Ok(ResourceDescription {
        urn: urn.ok_or_else(|| missing("urn"))?,
        role: role.ok_or_else(|| missing("role"))?,
        capabilities,
        position: position.ok_or_else(|| missing("position"))?,
        parent_gateway,
        connection: Connection {
            address: address.unwrap_or_default(),
            kind: kind.ok_or_else(|| missing("connection.type"))?,
        },
        state: state.unwrap_or(NodeState::New),
        hw_meta,
        registered_at,
        last_seen: last_seen.unwrap_or(registered_at),
    })
}

/// Partial description for updates. Only mutable fields can appear.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Update {
    pub state: Option<NodeState>,
    pub position: Option<Position>,
    pub last_seen: Option<SimTime>,
    /// Merged into hw-meta; battery and friends live here.
    pub hw_meta: BTreeMap<String, String>,
}

impl Update {
    pub fn state(state: NodeState) -> Self {
        Update {
            state: Some(state),
            ..Update::default()
        }
    }

    pub fn seen(at: SimTime) -> Self {
        Update {
            last_seen: Some(at),
            ..Update::default()
        }
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.hw_meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn encode(&self) -> String {
        let mut s = String::new();
        if let Some(st) = self.state {
            let _ = writeln!(s, "state={st}");
        }
        if let Some(p) = &self.position {
            let _ = writeln!(s, "position={}", position_text(p));
        }
        for (k, v) in &self.hw_meta {
            let _ = writeln!(s, "hw.{}={}", escape(k), escape(v));
        }
        if let Some(t) = self.last_seen {
            let _ = writeln!(s, "last-seen={}", t.as_millis());
        }
        s
    }

    pub fn decode(text: &str) -> Result<Update, DocError> {
        let mut u = Update::default();
        for (line, kv) in lines(text) {
            let (k, v) = kv?;
            let err = |msg: String| DocError { line, msg };
            match k {
                "state" => u.state = Some(v.parse().map_err(|e| err(format!("{e}")))?),
                "position" => u.position = Some(parse_position(v).map_err(err)?),
                "last-seen" => {
                    u.last_seen = Some(SimTime(v.parse().map_err(|_| err("bad timestamp".into()))?))
                }
                other => match other.strip_prefix("hw.") {
                    Some(key) if !key.is_empty() => {
                        u.hw_meta.insert(unescape(key), unescape(v));
                    }
                    _ => return Err(err(format!("{other:?} cannot be updated"))),
                },
            }
        }
        Ok(u)
    }
}

