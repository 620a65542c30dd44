//! The assembled testbed.
//!
//! [`Testbed`] wires the simulated city to the management plane, the
//! experiment runtime and the observation store, and steps them together on
//! one thread. [`Server`] runs it against the wall clock behind the HTTP
//! endpoints in [`http`], and [`scenario`] replays scripted runs with inline
//! assertions.

mod bed;
mod error;
pub mod http;
mod ops;
pub mod scenario;
mod server;

pub use bed::{parse_instant, Testbed, TestbedConfig};
pub use error::{exp_kind, TestbedError};
pub use ops::{
    parse_fault, parse_mode, FlashOutcome, Granted, NodeAvailability, NodeSet, Slot, SummaryRow,
};
pub use server::{Server, ServerConfig};
