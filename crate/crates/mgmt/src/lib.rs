//! Resource management plane.
//!
//! A [`GatewayAgent`] runs per gateway (plus one GPRS backhaul agent for
//! vehicles). It notices new nodes from their service frames, registers
//! them, heartbeats on behalf of its gateway and probes its members. The
//! [`PortalManager`] owns the resource directory, drives each registration
//! through the configurators and keeps soft-state timers. The two
//! configurators apply reconfiguration commands to the experiment runtime
//! and the observation store.
//!
//! Every component talks only through an [`citytb_bus::EventBus`] and is
//! driven by explicit `tick`/`pump` calls, so a single thread can run the
//! whole plane deterministically.

mod agent;
mod config;
mod configurator;
mod portal;

pub use agent::{AgentStats, EntryState, GatewayAgent, NodeTableEntry};
pub use config::{load_manifest, AgentConfig, ConfigError, Timeouts};
pub use configurator::{ExperimentConfigurator, ServiceConfigurator};
pub use portal::{AuditLine, PortalManager, RegistrationFailure};
