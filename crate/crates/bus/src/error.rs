use thiserror::Error;

use crate::registry::Topic;
use crate::wire::EncodeError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BusError {
    #[error("{event_type} belongs on {expected}, not {got}")]
    TopicMismatch {
        event_type: String,
        expected: Topic,
        got: Topic,
    },
    #[error("unknown event type {0:?}")]
    UnknownEventType(String),
    #[error("bus unavailable")]
    Unavailable,
    #[error("subscription disconnected")]
    Disconnected,
    #[error("invalid subscriber id {0:?}")]
    BadSubscriber(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for BusError {
    fn from(e: std::io::Error) -> Self {
        BusError::Io(e.to_string())
    }
}
