use citytb_asi::AsiError;
use citytb_bus::BusError;
use citytb_exp::ExpError;
use citytb_rd::RdError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TestbedError {
    #[error("topology: {0}")]
    Topology(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Rd(#[from] RdError),
    #[error(transparent)]
    Asi(#[from] AsiError),
    #[error(transparent)]
    Exp(#[from] ExpError),
    #[error("{registered} of {expected} devices registered")]
    NotReady { registered: usize, expected: usize },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TestbedError {
    /// Short stable name, used as the `error` field of HTTP error bodies and
    /// as the outcome of scenario commands.
    pub fn kind(&self) -> &'static str {
        match self {
            TestbedError::Topology(_) => "Topology",
            TestbedError::Bus(_) => "Bus",
            TestbedError::Rd(e) => match e {
                RdError::Validation(_) => "ValidationError",
                RdError::Conflict { .. } => "Conflict",
                RdError::NotFound(_) => "NotFound",
                RdError::BadQuery(_) => "BadQuery",
                RdError::Doc(_) => "BadDocument",
                RdError::Io(_) => "Io",
            },
            TestbedError::Asi(e) => match e {
                AsiError::NotServiceRegistered(_) => "NotServiceRegistered",
                AsiError::OutOfOrder { .. } => "OutOfOrder",
                AsiError::BadFilter(_) => "BadFilter",
                AsiError::NoData(_) => "NoData",
                AsiError::Io(_) => "Io",
            },
            TestbedError::Exp(e) => exp_kind(e),
            TestbedError::NotReady { .. } => "NotReady",
            TestbedError::BadRequest(_) => "BadRequest",
            TestbedError::NotFound(_) => "NotFound",
            TestbedError::Io(_) => "Io",
        }
    }
}

pub fn exp_kind(e: &ExpError) -> &'static str {
    match e {
        ExpError::Unauthorized => "Unauthorized",
        ExpError::Conflict { .. } => "Conflict",
        ExpError::UnknownUrn(_) => "UnknownUrn",
        ExpError::NotReservable(_) => "NotReservable",
        ExpError::BadInterval(_) => "BadInterval",
        ExpError::BadRequest(_) => "BadRequest",
        ExpError::UnknownReservation(_) => "UnknownReservation",
        ExpError::NotOwner => "NotOwner",
        ExpError::InvalidKey => "InvalidKey",
        ExpError::NotStartedYet(_) => "NotStartedYet",
        ExpError::Expired => "Expired",
        ExpError::UnknownSession(_) => "UnknownSession",
        ExpError::NotInReservation(_) => "NotInReservation",
        ExpError::NodeUnreachable(_) => "NodeUnreachable",
        ExpError::PartialFailure(_) => "PartialFailure",
        ExpError::ImageTooLarge { .. } => "ImageTooLarge",
        ExpError::EmptyImage => "EmptyImage",
        ExpError::UnknownBehavior(_) => "UnknownBehavior",
        ExpError::Overlay(_) => "Overlay",
    }
}
