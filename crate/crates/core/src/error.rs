use thiserror::Error;

use crate::lifecycle::{LifecycleEvent, NodeState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("malformed URN {0:?}: {1}")]
    MalformedUrn(String, &'static str),
    #[error("illegal transition: {event} in state {state}")]
    IllegalTransition {
        state: NodeState,
        event: LifecycleEvent,
    },
    #[error("unknown {what} {value:?}")]
    UnknownVariant { what: &'static str, value: String },
    #[error("bad duration {0:?}")]
    BadDuration(String),
}

/// A violated field invariant of a [`crate::ResourceDescription`] or
/// [`crate::Observation`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("{0}: capabilities must be nonempty for this role")]
    NoCapabilities(String),
    #[error("{0}: parent gateway must be present iff the connection is mesh")]
    ParentGatewayMismatch(String),
    #[error("{0}: participatory sensing nodes have no gateway parent")]
    ParticipatoryWithGateway(String),
    #[error("{0}: last-seen precedes registered-at")]
    LastSeenBeforeRegistered(String),
    #[error("{source_urn}: phenomenon {phenomenon:?} not among the source's capabilities")]
    UnknownPhenomenon {
        source_urn: String,
        phenomenon: String,
    },
    #[error("{0}: mobile observations must carry speed and course")]
    MissingMotion(String),
}
