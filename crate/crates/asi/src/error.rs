use citytb_core::{SimTime, Urn};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsiError {
    #[error("{0} is not registered for service data")]
    NotServiceRegistered(Urn),
    #[error("{urn}: timestamp {got} is older than {last}")]
    OutOfOrder { urn: Urn, last: SimTime, got: SimTime },
    #[error("bad filter: {0}")]
    BadFilter(String),
    #[error("no data: {0}")]
    NoData(String),
    #[error("store i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for AsiError {
    fn from(e: std::io::Error) -> Self {
        AsiError::Io(e.to_string())
    }
}
