use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Role of a resource in the testbed taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeRole {
    /// Portal servers, gateways and repeaters.
    #[serde(rename = "infrastructural")]
    Infrastructural,
    #[serde(rename = "experimentation")]
    ExperimentationIoT,
    #[serde(rename = "service-only")]
    ServiceOnlyIoT,
    #[serde(rename = "participatory")]
    ParticipatorySensing,
}

impl NodeRole {
    pub const ALL: [NodeRole; 4] = [
        NodeRole::Infrastructural,
        NodeRole::ExperimentationIoT,
        NodeRole::ServiceOnlyIoT,
        NodeRole::ParticipatorySensing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Infrastructural => "infrastructural",
            NodeRole::ExperimentationIoT => "experimentation",
            NodeRole::ServiceOnlyIoT => "service-only",
            NodeRole::ParticipatorySensing => "participatory",
        }
    }

    pub fn is_reservable(self) -> bool {
        self == NodeRole::ExperimentationIoT
    }

    pub fn is_flashable(self) -> bool {
        self == NodeRole::ExperimentationIoT
    }

    /// Roles that must declare at least one sensing capability.
    pub fn requires_capabilities(self) -> bool {
        matches!(self, NodeRole::ExperimentationIoT | NodeRole::ServiceOnlyIoT)
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeRole {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Also accept the variant names, in any case.
        NodeRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s || format!("{r:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownVariant {
                what: "role",
                value: s.to_string(),
            })
    }
}
