//! Domain model shared by every part of the city testbed.
//!
//! Everything here is an immutable value type. The node lifecycle is a pure
//! function ([`transition`]) and resource descriptions validate themselves
//! against a fixed set of field invariants ([`ResourceDescription::validate`]).

mod description;
mod error;
mod geo;
mod image;
mod lifecycle;
mod observation;
mod role;
mod time;
mod urn;

pub use description::{
    Capability, Connection, ConnectionKind, Position, ResourceDescription, META_BATTERY,
    META_CLASS, META_CPU_LOAD, META_FEEDS_SERVICES, META_FREE_MEMORY, META_MAC,
};
pub use error::{ModelError, ValidationError};
pub use geo::{GeoCircle, GeoPoint, EARTH_RADIUS_M};
pub use image::{checksum, NodeImage};
pub use lifecycle::{transition, LifecycleEvent, NodeState};
pub use observation::{Motion, Observation};
pub use role::NodeRole;
pub use time::{parse_duration, SimTime};
pub use urn::Urn;
