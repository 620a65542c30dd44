#![allow(dead_code)]

use std::collections::BTreeMap;

use citytb_core::{
    Capability, Connection, ConnectionKind, GeoPoint, NodeRole, NodeState, Position,
    ResourceDescription, SimTime, Urn,
};

pub fn urn(id: &str) -> Urn {
    Urn::new("smartsantander", "santander", id).unwrap()
}

pub fn sensor(id: &str, role: NodeRole, phenomena: &[&str], gw: &str, at: GeoPoint) -> ResourceDescription {
    ResourceDescription {
        urn: urn(id),
        role,
        capabilities: phenomena.iter().map(|p| Capability::new(*p, "u")).collect(),
        position: Position::Fixed(at),
        parent_gateway: Some(urn(gw)),
        connection: Connection {
            address: format!("mac-{id}"),
            kind: ConnectionKind::Mesh,
        },
        state: NodeState::Active,
        hw_meta: BTreeMap::from([("class".to_string(), "lamppost".to_string())]),
        registered_at: SimTime(1000),
        last_seen: SimTime(1000),
    }
}

pub fn vehicle(id: &str, phenomena: &[&str]) -> ResourceDescription {
    ResourceDescription {
        urn: urn(id),
        role: NodeRole::ExperimentationIoT,
        capabilities: phenomena.iter().map(|p| Capability::new(*p, "u")).collect(),
        position: Position::Mobile,
        parent_gateway: None,
        connection: Connection {
            address: format!("imsi-{id}"),
            kind: ConnectionKind::Gprs,
        },
        state: NodeState::Active,
        hw_meta: BTreeMap::from([("class".to_string(), "vehicle".to_string())]),
        registered_at: SimTime(0),
        last_seen: SimTime(0),
    }
}

/// Descriptions read straight off a topology seed, with a tiny parser of
/// our own so lookups can be checked against the file.
pub fn from_seed(text: &str) -> Vec<ResourceDescription> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap().trim();
        let mut words = line.split_whitespace();
        let kind = words.next().unwrap_or("");
        if !matches!(kind, "gateway" | "node" | "mobile") {
            continue;
        }
        let id = words.next().unwrap();
        let kv: BTreeMap<&str, &str> = words.filter_map(|w| w.split_once('=')).collect();
        let phen: Vec<&str> = kv
            .get("sensors")
            .map(|s| s.split(',').map(|c| c.split(':').next().unwrap()).collect())
            .unwrap_or_default();
        let at = || GeoPoint::new(kv["lat"].parse().unwrap(), kv["lon"].parse().unwrap());
        let role: NodeRole = kv.get("role").copied().unwrap_or("infrastructural").parse().unwrap();
        let mut d = match kind {
            "gateway" => {
                let mut d = sensor(id, NodeRole::Infrastructural, &[], id, at());
                d.parent_gateway = None;
                d.connection.kind = ConnectionKind::Wired;
                d.hw_meta.insert("class".into(), "gateway".into());
                d
            }
            "node" => sensor(id, role, &phen, kv["cluster"], at()),
            _ => vehicle(id, &phen),
        };
        if let Some(c) = kv.get("class") {
            d.hw_meta.insert("class".into(), c.to_string());
        }
        out.push(d);
    }
    out
}
