use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, ValidationError};
use crate::geo::GeoPoint;
use crate::lifecycle::NodeState;
use crate::role::NodeRole;
use crate::time::SimTime;
use crate::urn::Urn;

/// Well-known hardware metadata keys.
pub const META_CLASS: &str = "class";
pub const META_BATTERY: &str = "battery";
pub const META_FREE_MEMORY: &str = "free-memory";
pub const META_CPU_LOAD: &str = "cpu-load";
pub const META_MAC: &str = "mac";
pub const META_FEEDS_SERVICES: &str = "feeds-services";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub phenomenon: String,
    pub unit: String,
    pub accuracy: Option<f64>,
}

impl Capability {
    pub fn new(phenomenon: impl Into<String>, unit: impl Into<String>) -> Self {
        Capability {
            phenomenon: phenomenon.into(),
            unit: unit.into(),
            accuracy: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Position {
    Fixed(GeoPoint),
    Mobile,
}

impl Position {
    pub fn fixed(&self) -> Option<GeoPoint> {
        match self {
            Position::Fixed(p) => Some(*p),
            Position::Mobile => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectionKind {
    Mesh,
    Gprs,
    Wired,
}

impl ConnectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConnectionKind::Mesh => "mesh",
            ConnectionKind::Gprs => "gprs",
            ConnectionKind::Wired => "wired",
        }
    }
}

impl fmt::Display for ConnectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConnectionKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mesh" => Ok(ConnectionKind::Mesh),
            "gprs" => Ok(ConnectionKind::Gprs),
            "wired" => Ok(ConnectionKind::Wired),
            _ => Err(ModelError::UnknownVariant {
                what: "connection type",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    pub address: String,
    pub kind: ConnectionKind,
}

/// Canonical description of one resource as stored in the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceDescription {
    pub urn: Urn,
    pub role: NodeRole,
    pub capabilities: Vec<Capability>,
    pub position: Position,
    pub parent_gateway: Option<Urn>,
    pub connection: Connection,
    pub state: NodeState,
    pub hw_meta: BTreeMap<String, String>,
    pub registered_at: SimTime,
    pub last_seen: SimTime,
}

impl ResourceDescription {
    /// Checks the field invariants. Acceptance is exactly their conjunction.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let urn = || self.urn.to_string();
        if self.role.requires_capabilities() && self.capabilities.is_empty() {
            return Err(ValidationError::NoCapabilities(urn()));
        }
        if self.parent_gateway.is_some() != (self.connection.kind == ConnectionKind::Mesh) {
            return Err(ValidationError::ParentGatewayMismatch(urn()));
        }
        if self.role == NodeRole::ParticipatorySensing && self.parent_gateway.is_some() {
            return Err(ValidationError::ParticipatoryWithGateway(urn()));
        }
        if self.last_seen < self.registered_at {
            return Err(ValidationError::LastSeenBeforeRegistered(urn()));
        }
        Ok(())
    }

    pub fn has_phenomenon(&self, phenomenon: &str) -> bool {
        self.capabilities.iter().any(|c| c.phenomenon == phenomenon)
    }

    pub fn class(&self) -> Option<&str> {
        self.hw_meta.get(META_CLASS).map(String::as_str)
    }

    pub fn is_gateway(&self) -> bool {
        self.class() == Some("gateway")
    }

    /// Whether the node's observations are meant for the service plane.
    pub fn feeds_services(&self) -> bool {
        match self.role {
            NodeRole::ServiceOnlyIoT | NodeRole::ParticipatorySensing => true,
            NodeRole::ExperimentationIoT => {
                self.hw_meta.get(META_FEEDS_SERVICES).map(String::as_str) != Some("false")
            }
            NodeRole::Infrastructural => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn urn(id: &str) -> Urn {
        Urn::new("smartsantander", "santander", id).unwrap()
    }

    pub(crate) fn temp_sensor() -> ResourceDescription {
        ResourceDescription {
            urn: urn("node0001"),
            role: NodeRole::ExperimentationIoT,
            capabilities: vec![Capability::new("temperature", "celsius")],
            position: Position::Fixed(GeoPoint::new(43.46, -3.81)),
            parent_gateway: Some(urn("gw01")),
            connection: Connection {
                address: "0013a200-0001".into(),
                kind: ConnectionKind::Mesh,
            },
            state: NodeState::Active,
            hw_meta: BTreeMap::new(),
            registered_at: SimTime(1000),
            last_seen: SimTime(1000),
        }
    }

    #[test]
    fn valid_sensor_passes() {
        temp_sensor().validate().unwrap();
    }

    #[test]
    fn each_invariant_is_enforced() {
        let mut d = temp_sensor();
        d.capabilities.clear();
        assert!(matches!(d.validate(), Err(ValidationError::NoCapabilities(_))));

        let mut d = temp_sensor();
        d.parent_gateway = None;
        assert!(matches!(
            d.validate(),
            Err(ValidationError::ParentGatewayMismatch(_))
        ));

        let mut d = temp_sensor();
        d.last_seen = SimTime(999);
        assert!(matches!(
            d.validate(),
            Err(ValidationError::LastSeenBeforeRegistered(_))
        ));

        let mut d = temp_sensor();
        d.role = NodeRole::ParticipatorySensing;
        assert!(matches!(
            d.validate(),
            Err(ValidationError::ParticipatoryWithGateway(_))
        ));
    }

    /// Straight transcription of the invariant list, kept separate from
    /// `validate` so the two can be compared.
    fn naive_valid(d: &ResourceDescription) -> bool {
        let caps_ok = match d.role {
            NodeRole::ExperimentationIoT | NodeRole::ServiceOnlyIoT => !d.capabilities.is_empty(),
            _ => true,
        };
        let is_mesh = matches!(d.connection.kind, ConnectionKind::Mesh);
        let has_parent = d.parent_gateway.is_some();
        let parent_ok = (has_parent && is_mesh) || (!has_parent && !is_mesh);
        let ps_ok = !(d.role == NodeRole::ParticipatorySensing && has_parent);
        let time_ok = d.last_seen.0 >= d.registered_at.0;
        caps_ok && parent_ok && ps_ok && time_ok
    }

    fn arb_description() -> impl Strategy<Value = ResourceDescription> {
        (
            0usize..4,
            0usize..3,
            any::<bool>(),
            0usize..3,
            0u64..5,
            0u64..5,
        )
            .prop_map(|(role, ncaps, parent, kind, reg, seen)| {
                let mut d = temp_sensor();
                d.role = NodeRole::ALL[role];
                d.capabilities = (0..ncaps)
                    .map(|i| Capability::new(format!("p{i}"), "u"))
                    .collect();
                d.parent_gateway = parent.then(|| urn("gw01"));
                d.connection.kind =
                    [ConnectionKind::Mesh, ConnectionKind::Gprs, ConnectionKind::Wired][kind];
                d.registered_at = SimTime(reg);
                d.last_seen = SimTime(seen);
                d
            })
    }

    proptest! {
        #[test]
        fn validate_matches_naive_validator(d in arb_description()) {
            prop_assert_eq!(d.validate().is_ok(), naive_valid(&d));
        }
    }
}
