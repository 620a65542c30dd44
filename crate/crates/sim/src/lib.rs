//! Deterministic discrete-event simulation of the deployed infrastructure.
//!
//! A [`World`] holds gateway-headed clusters of fixed nodes, repeaters and
//! GPRS-connected vehicles. Every fixed node sits on two radio planes: the
//! management mesh (multi-hop to its cluster head) and the experimentation
//! network (unit-disc links, cluster-agnostic). [`World::step`] advances
//! simulated time and returns the frames and faults that occurred; the same
//! seed, topology and fault schedule always produce the same events.

pub mod behavior;
mod env;
mod error;
mod event;
mod link;
mod node;
pub mod topology;
mod world;

pub use env::{Environment, Weather};
pub use error::{SimError, TopologyError};
pub use event::{FaultKind, FrameKind, GprsUplink, Plane, ServiceFrame, SimEvent, TraceRecord};
pub use link::LinkModel;
pub use node::{InstalledImage, Mobility, Radios, SimGateway, SimNode};
pub use topology::{ClusterTopology, RouteTable, TopologyFile};
pub use world::{load_topology, NodeApiOp, NodeApiReply, NodeOutput, World, CONTACT_TICK};
