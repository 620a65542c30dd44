use std::fmt;

use citytb_core::{Observation, SimTime, Urn};

/// The two radio networks of a fixed node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plane {
    Management,
    Experimentation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FaultKind {
    NodeDeath,
    GatewayDeath,
    /// Raise the loss of every management edge touching the target.
    LinkDegrade(f64),
    /// Bring a dead node or gateway back.
    Revive,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultKind::NodeDeath => f.write_str("node-death"),
            FaultKind::GatewayDeath => f.write_str("gw-death"),
            FaultKind::LinkDegrade(p) => write!(f, "link-degrade({p})"),
            FaultKind::Revive => f.write_str("revive"),
        }
    }
}

/// A periodic service frame that made it to the cluster head.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceFrame {
    pub emitted_at: SimTime,
    pub delivered_at: SimTime,
    pub source: Urn,
    pub gateway: Urn,
    /// Hops after the source, ending with the gateway.
    pub path: Vec<Urn>,
    pub observations: Vec<Observation>,
}

/// A service frame from a vehicle node, carried over GPRS.
#[derive(Debug, Clone, PartialEq)]
pub struct GprsUplink {
    pub at: SimTime,
    pub source: Urn,
    pub observations: Vec<Observation>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimEvent {
    ServiceFrame(ServiceFrame),
    GprsUplink(GprsUplink),
    FrameLost {
        at: SimTime,
        source: Urn,
        from: Urn,
        to: Urn,
    },
    NoRoute {
        at: SimTime,
        source: Urn,
    },
    Contact {
        at: SimTime,
        mobile: Urn,
        fixed: Urn,
        begin: bool,
    },
    Fault {
        at: SimTime,
        target: Urn,
        kind: FaultKind,
    },
}

impl SimEvent {
    pub fn at(&self) -> SimTime {
        match self {
            SimEvent::ServiceFrame(f) => f.emitted_at,
            SimEvent::GprsUplink(u) => u.at,
            SimEvent::FrameLost { at, .. }
            | SimEvent::NoRoute { at, .. }
            | SimEvent::Contact { at, .. }
            | SimEvent::Fault { at, .. } => *at,
        }
    }

    pub fn plane(&self) -> Option<Plane> {
        match self {
            SimEvent::ServiceFrame(_)
            | SimEvent::GprsUplink(_)
            | SimEvent::FrameLost { .. }
            | SimEvent::NoRoute { .. } => Some(Plane::Management),
            SimEvent::Contact { .. } => Some(Plane::Experimentation),
            SimEvent::Fault { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Service,
    Gprs,
    NodeApi,
    Motap,
    Experiment,
}

impl FrameKind {
    pub fn plane(self) -> Plane {
        match self {
            FrameKind::Service | FrameKind::Gprs | FrameKind::NodeApi | FrameKind::Motap => {
                Plane::Management
            }
            FrameKind::Experiment => Plane::Experimentation,
        }
    }
}

/// One frame as it crossed the radio networks, hop by hop.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub at: SimTime,
    pub plane: Plane,
    pub kind: FrameKind,
    /// Nodes traversed, starting with the sender.
    pub hops: Vec<Urn>,
}
