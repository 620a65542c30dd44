use std::fmt;
use std::str::FromStr;

use crate::payload::WireKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Registration,
    Monitoring,
    Reconfiguration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kind {
    Request,
    Reply,
}

/// One of the six bus topics: a channel and a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic {
    pub channel: Channel,
    pub kind: Kind,
}

impl Topic {
    pub const fn new(channel: Channel, kind: Kind) -> Self {
        Topic { channel, kind }
    }

    pub const ALL: [Topic; 6] = [
        Topic::new(Channel::Registration, Kind::Request),
        Topic::new(Channel::Registration, Kind::Reply),
        Topic::new(Channel::Monitoring, Kind::Request),
        Topic::new(Channel::Monitoring, Kind::Reply),
        Topic::new(Channel::Reconfiguration, Kind::Request),
        Topic::new(Channel::Reconfiguration, Kind::Reply),
    ];

    pub fn name(&self) -> &'static str {
        match (self.channel, self.kind) {
            (Channel::Registration, Kind::Request) => "registration.request",
            (Channel::Registration, Kind::Reply) => "registration.reply",
            (Channel::Monitoring, Kind::Request) => "monitoring.request",
            (Channel::Monitoring, Kind::Reply) => "monitoring.reply",
            (Channel::Reconfiguration, Kind::Request) => "reconfiguration.request",
            (Channel::Reconfiguration, Kind::Reply) => "reconfiguration.reply",
        }
    }

    pub(crate) fn index(&self) -> usize {
        Topic::ALL.iter().position(|t| t == self).unwrap()
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Topic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Topic::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown topic {s:?}"))
    }
}

/// Field tags shared by the registered payload schemas.
pub mod tags {
    pub const URN: u16 = 1;
    pub const GATEWAY: u16 = 2;
    pub const DESCRIPTION: u16 = 3;
    pub const OK: u16 = 4;
    pub const CAUSE: u16 = 5;
    pub const MEMBERS: u16 = 6;
    pub const BATTERY: u16 = 7;
    pub const FREE_MEMORY: u16 = 8;
    pub const CPU_LOAD: u16 = 9;
    pub const ALIVE: u16 = 10;
    pub const ROLE: u16 = 11;
    pub const REASON: u16 = 12;
    pub const SEQ: u16 = 13;
}

pub const NODE_REG_REQUEST: &str = "NODE_REG_REQUEST";
pub const GW_REG_REQUEST: &str = "GW_REG_REQUEST";
pub const PS_REG_REQUEST: &str = "PS_REG_REQUEST";
pub const NODE_REG_REPLY: &str = "NODE_REG_REPLY";
pub const GW_REG_REPLY: &str = "GW_REG_REPLY";
pub const PS_REG_REPLY: &str = "PS_REG_REPLY";
pub const HELLO: &str = "HELLO";
pub const HELLO_ACK: &str = "HELLO_ACK";
pub const NODE_STATUS_REQUEST: &str = "NODE_STATUS_REQUEST";
pub const NODE_STATUS_REPLY: &str = "NODE_STATUS_REPLY";
pub const NODE_INVALIDATION_REQUEST: &str = "NODE_INVALIDATION_REQUEST";
pub const NODE_INVALIDATION_REPLY: &str = "NODE_INVALIDATION_REPLY";
pub const ADD_SENSOR_REQ: &str = "ADD_SENSOR_REQ";
pub const ADD_SENSOR_REP: &str = "ADD_SENSOR_REP";
pub const ADD_GW_REQ: &str = "ADD_GW_REQ";
pub const ADD_GW_REP: &str = "ADD_GW_REP";
pub const ADD_PS_REQ: &str = "ADD_PS_REQ";
pub const ADD_PS_REP: &str = "ADD_PS_REP";
pub const ADD_SERVICE_REQ: &str = "ADD_SERVICE_REQ";
pub const ADD_SERVICE_REP: &str = "ADD_SERVICE_REP";
pub const REMOVE_SENSOR_REQ: &str = "REMOVE_SENSOR_REQ";
pub const REMOVE_SENSOR_REP: &str = "REMOVE_SENSOR_REP";
pub const REMOVE_GW_REQ: &str = "REMOVE_GW_REQ";
pub const REMOVE_GW_REP: &str = "REMOVE_GW_REP";
pub const REMOVE_PS_REQ: &str = "REMOVE_PS_REQ";
pub const REMOVE_PS_REP: &str = "REMOVE_PS_REP";
pub const REMOVE_SERVICE_REQ: &str = "REMOVE_SERVICE_REQ";
pub const REMOVE_SERVICE_REP: &str = "REMOVE_SERVICE_REP";

/// Registered event type: where it travels and which fields it declares.
#[derive(Debug, Clone, Copy)]
pub struct EventSpec {
    pub name: &'static str,
    pub topic: Topic,
    pub fields: &'static [(u16, WireKind)],
}

use tags::*;
use WireKind::{Bool, Str, F64, U64};

const REG_REQ: &[(u16, WireKind)] = &[(URN, Str), (DESCRIPTION, Str), (GATEWAY, Str)];
const OUTCOME: &[(u16, WireKind)] = &[(URN, Str), (OK, Bool), (CAUSE, Str)];
const RECONF_REQ: &[(u16, WireKind)] = &[(URN, Str), (ROLE, Str), (DESCRIPTION, Str), (REASON, Str)];

const fn spec(
    name: &'static str,
    channel: Channel,
    kind: Kind,
    fields: &'static [(u16, WireKind)],
) -> EventSpec {
    EventSpec {
        name,
        topic: Topic::new(channel, kind),
        fields,
    }
}

use Channel::{Monitoring, Reconfiguration, Registration};
use Kind::{Reply, Request};

pub static REGISTRY: &[EventSpec] = &[
    spec(NODE_REG_REQUEST, Registration, Request, REG_REQ),
    spec(GW_REG_REQUEST, Registration, Request, REG_REQ),
    spec(PS_REG_REQUEST, Registration, Request, REG_REQ),
    spec(NODE_REG_REPLY, Registration, Reply, OUTCOME),
    spec(GW_REG_REPLY, Registration, Reply, OUTCOME),
    spec(PS_REG_REPLY, Registration, Reply, OUTCOME),
    spec(HELLO, Monitoring, Request, &[(GATEWAY, Str), (MEMBERS, U64), (SEQ, U64)]),
    spec(HELLO_ACK, Monitoring, Reply, &[(GATEWAY, Str), (OK, Bool), (CAUSE, Str)]),
    spec(
        NODE_STATUS_REQUEST,
        Monitoring,
        Request,
        &[
            (URN, Str),
            (GATEWAY, Str),
            (ALIVE, Bool),
            (BATTERY, F64),
            (FREE_MEMORY, U64),
            (CPU_LOAD, F64),
        ],
    ),
    spec(NODE_STATUS_REPLY, Monitoring, Reply, OUTCOME),
    spec(
        NODE_INVALIDATION_REQUEST,
        Monitoring,
        Request,
        &[(URN, Str), (GATEWAY, Str), (REASON, Str)],
    ),
    spec(NODE_INVALIDATION_REPLY, Monitoring, Reply, OUTCOME),
    spec(ADD_SENSOR_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(ADD_SENSOR_REP, Reconfiguration, Reply, OUTCOME),
    spec(ADD_GW_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(ADD_GW_REP, Reconfiguration, Reply, OUTCOME),
    spec(ADD_PS_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(ADD_PS_REP, Reconfiguration, Reply, OUTCOME),
    spec(ADD_SERVICE_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(ADD_SERVICE_REP, Reconfiguration, Reply, OUTCOME),
    spec(REMOVE_SENSOR_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(REMOVE_SENSOR_REP, Reconfiguration, Reply, OUTCOME),
    spec(REMOVE_GW_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(REMOVE_GW_REP, Reconfiguration, Reply, OUTCOME),
    spec(REMOVE_PS_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(REMOVE_PS_REP, Reconfiguration, Reply, OUTCOME),
    spec(REMOVE_SERVICE_REQ, Reconfiguration, Request, RECONF_REQ),
    spec(REMOVE_SERVICE_REP, Reconfiguration, Reply, OUTCOME),
];

pub fn lookup(event_type: &str) -> Option<&'static EventSpec> {
    REGISTRY.iter().find(|s| s.name == event_type)
}

/// Reply type paired with a request type.
pub fn reply_for(request: &str) -> Option<&'static str> {
    let spec = lookup(request)?;
    if spec.topic.kind != Kind::Request {
        return None;
    }
    let reply = if request == HELLO {
        HELLO_ACK.to_string()
    } else if let Some(stem) = request.strip_suffix("_REQUEST") {
        format!("{stem}_REPLY")
    } else {
        format!("{}_REP", request.strip_suffix("_REQ")?)
    };
    lookup(&reply).map(|s| s.name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_request_has_a_reply_on_the_same_channel() {
        for spec in REGISTRY.iter().filter(|s| s.topic.kind == Kind::Request) {
            let reply = lookup(reply_for(spec.name).unwrap()).unwrap();
            assert_eq!(reply.topic.channel, spec.topic.channel, "{}", spec.name);
            assert_eq!(reply.topic.kind, Kind::Reply);
        }
        assert_eq!(reply_for(NODE_REG_REPLY), None);
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<_> = REGISTRY.iter().map(|s| s.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), REGISTRY.len());
    }

    #[test]
    fn topic_names_round_trip() {
        for t in Topic::ALL {
            assert_eq!(t.name().parse::<Topic>().unwrap(), t);
        }
    }
}
