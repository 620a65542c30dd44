//! Management event bus: three channels (registration, monitoring,
//! reconfiguration), each with a request and a reply topic.
//!
//! [`Broker`] is the in-process implementation with optional on-disk
//! persistence; [`tcp::BusServer`] and [`tcp::RemoteBus`] carry the same
//! interface over TCP. Frame layout is documented in [`wire`].

mod broker;
mod dedup;
mod error;
mod event;
mod payload;
pub mod registry;
pub mod tcp;
pub mod wire;

pub use broker::{AuditEntry, Broker, Delivery, EventBus, EventStream, Filter, Subscription};
pub use dedup::Dedup;
pub use error::BusError;
pub use event::{CorrelationId, ManagementEvent};
pub use payload::{Payload, Value, WireKind};
pub use registry::{tags, Channel, Kind, Topic};
pub use wire::{decode_event, encode_event, DecodeError, EncodeError};
