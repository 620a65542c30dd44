use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeState {
    New,
    Active,
    Disabled,
    Deleted,
}

impl NodeState {
    pub const ALL: [NodeState; 4] = [
        NodeState::New,
        NodeState::Active,
        NodeState::Disabled,
        NodeState::Deleted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::New => "new",
            NodeState::Active => "active",
            NodeState::Disabled => "disabled",
            NodeState::Deleted => "deleted",
        }
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeState::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ModelError::UnknownVariant {
                what: "state",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LifecycleEvent {
    RegOk,
    InvalidationTimeout,
    DeletionTimeout,
    FreshHello,
}

impl LifecycleEvent {
    pub const ALL: [LifecycleEvent; 4] = [
        LifecycleEvent::RegOk,
        LifecycleEvent::InvalidationTimeout,
        LifecycleEvent::DeletionTimeout,
        LifecycleEvent::FreshHello,
    ];
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LifecycleEvent::RegOk => "reg-ok",
            LifecycleEvent::InvalidationTimeout => "invalidation-timeout",
            LifecycleEvent::DeletionTimeout => "deletion-timeout",
            LifecycleEvent::FreshHello => "fresh-hello",
        })
    }
}

/// Soft-state lifecycle of a registered resource.
///
/// `Deleted + reg-ok` yields `New`: a deleted resource that registers again
/// starts over as a fresh record.
pub fn transition(state: NodeState, event: LifecycleEvent) -> Result<NodeState, ModelError> {
    use LifecycleEvent::*;
    use NodeState::*;
    match (state, event) {
        (New, RegOk) => Ok(Active),
        (Active, InvalidationTimeout) => Ok(Disabled),
        (Disabled, FreshHello) => Ok(Active),
        (Disabled, DeletionTimeout) => Ok(Deleted),
        (Deleted, RegOk) => Ok(New),
        (state, event) => Err(ModelError::IllegalTransition { state, event }),
    }
}
