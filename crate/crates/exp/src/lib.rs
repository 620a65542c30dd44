//! Experiment runtime: the reservation calendar, experiment sessions with
//! their controller streams, the overlay that carries per-node virtual
//! connections over gateway links, and over-the-air image dissemination.

mod error;
pub mod motap;
pub mod overlay;
mod reservation;
mod runtime;

pub use error::ExpError;
pub use motap::{disseminate, Mode, MotapConfig, MotapReport, MotapTransfer};
pub use overlay::{Frame, OverlayError, OverlayLink, HEADER_LEN};
pub use reservation::{Busy, Calendar, Reservation, SecretKey, Status, GRANULARITY_MS};
pub use runtime::{
    AvailableNode, ControllerEvent, Direction, ExperimentRuntime, Session, TraceEntry,
};
