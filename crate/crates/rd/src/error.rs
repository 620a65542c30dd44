use citytb_core::{Urn, ValidationError};
use thiserror::Error;

use crate::doc::DocError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RdError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("{urn} already registered with a different {field}")]
    Conflict { urn: Urn, field: &'static str },
    #[error("{0} not found")]
    NotFound(Urn),
    #[error("bad query: {0}")]
    BadQuery(String),
    #[error(transparent)]
    Doc(#[from] DocError),
    #[error("store i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for RdError {
    fn from(e: std::io::Error) -> Self {
        RdError::Io(e.to_string())
    }
}
