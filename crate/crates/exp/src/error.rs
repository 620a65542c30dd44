use citytb_core::{SimTime, Urn};
use thiserror::Error;

use crate::overlay::OverlayError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpError {
    #[error("unknown user or wrong credential")]
    Unauthorized,
    #[error("conflict on {urns:?} in [{start}, {end})")]
    Conflict {
        urns: Vec<Urn>,
        start: SimTime,
        end: SimTime,
    },
    #[error("unknown URNs {0:?}")]
    UnknownUrn(Vec<Urn>),
    #[error("not reservable: {0:?}")]
    NotReservable(Vec<Urn>),
    #[error("bad interval: {0}")]
    BadInterval(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown reservation {0}")]
    UnknownReservation(u64),
    #[error("reservation belongs to another user")]
    NotOwner,
    #[error("invalid reservation key")]
    InvalidKey,
    #[error("reservation starts at {0}")]
    NotStartedYet(SimTime),
    #[error("reservation has expired")]
    Expired,
    #[error("unknown session {0}")]
    UnknownSession(u32),
    #[error("{0} is not in this reservation")]
    NotInReservation(Urn),
    #[error("{0} is unreachable")]
    NodeUnreachable(Urn),
    #[error("flash failed on {0:?}")]
    PartialFailure(Vec<Urn>),
    #[error("image of {size} bytes exceeds {max}")]
    ImageTooLarge { size: usize, max: usize },
    #[error("image is empty")]
    EmptyImage,
    #[error("unknown behavior {0:?}")]
    UnknownBehavior(String),
    #[error(transparent)]
    Overlay(#[from] OverlayError),
}
