use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use citytb_bus::registry::{
    GW_REG_REPLY, GW_REG_REQUEST, HELLO, HELLO_ACK, NODE_INVALIDATION_REQUEST, NODE_REG_REPLY,
    NODE_REG_REQUEST, NODE_STATUS_REPLY, NODE_STATUS_REQUEST,
};
use citytb_bus::{
    tags, BusError, Channel, CorrelationId, EventBus, EventStream, Filter, Kind, ManagementEvent,
    Payload, Topic,
};
use citytb_core::{
    Capability, Connection, ConnectionKind, GeoPoint, NodeRole, NodeState, Observation, Position,
    ResourceDescription, SimTime, Urn, META_BATTERY, META_CLASS, META_CPU_LOAD,
    META_FEEDS_SERVICES, META_FREE_MEMORY, META_MAC,
};
use citytb_sim::{NodeApiOp, NodeApiReply, SimError, World};

use crate::config::AgentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryState {
    /// Seen, but no registration request is outstanding.
    Unregistered,
    Pending { correlation: CorrelationId, since: SimTime },
    Registered,
    /// Reported gone after too many failed probes. A new frame starts over.
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTableEntry {
    pub urn: Urn,
    pub last_frame_at: SimTime,
    pub failures: u32,
    pub battery: f64,
    pub free_memory: u64,
    pub cpu_load: f64,
    pub state: EntryState,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub registrations_sent: u64,
    /// Frames from a node whose registration was still pending.
    pub suppressed: u64,
    pub observations_forwarded: u64,
    pub hellos: u64,
    pub probes: u64,
    pub invalidations: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GatewayReg {
    Unregistered,
    Pending(CorrelationId, SimTime),
    Registered,
}

/// Node manager for one cluster. With `gateway == None` it is the GPRS
/// backhaul agent serving mobile nodes: no heartbeat, no gateway record.
pub struct GatewayAgent {
    gateway: Option<Urn>,
    name: String,
    cfg: AgentConfig,
    bus: Arc<dyn EventBus>,
    replies: Box<dyn EventStream>,
    acks: Box<dyn EventStream>,
    manifest: BTreeMap<Urn, GeoPoint>,
    table: BTreeMap<Urn, NodeTableEntry>,
    outbox: VecDeque<ManagementEvent>,
    seq: u64,
    hello_seq: u64,
    next_hello: SimTime,
    next_probe: SimTime,
    gw_reg: GatewayReg,
    stats: AgentStats,
}

fn subscriber_name(gateway: Option<&Urn>) -> String {
    match gateway {
        Some(g) => format!("agent-{}", g.node_id()),
        None => "agent-gprs".to_string(),
    }
}

impl GatewayAgent {
    /// Subscribes the agent's reply streams. `manifest` supplies member
    /// positions; pass `world.manifest(gw)` when running embedded.
    pub fn new(
        gateway: Option<Urn>,
        manifest: BTreeMap<Urn, GeoPoint>,
        bus: Arc<dyn EventBus>,
        cfg: AgentConfig,
        now: SimTime,
    ) -> Result<GatewayAgent, BusError> {
        let name = subscriber_name(gateway.as_ref());
        let filter = |types: &[&str]| -> Option<Filter> {
            Some(types.iter().map(|t| t.to_string()).collect())
        };
        let replies = bus.subscribe(
            &name,
            Topic::new(Channel::Registration, Kind::Reply),
            true,
            filter(&[NODE_REG_REPLY, GW_REG_REPLY]),
        )?;
        let acks = bus.subscribe(
            &name,
            Topic::new(Channel::Monitoring, Kind::Reply),
            true,
            filter(&[HELLO_ACK, NODE_STATUS_REPLY]),
        )?;
        Ok(GatewayAgent {
            gw_reg: if gateway.is_some() {
                GatewayReg::Unregistered
            } else {
                GatewayReg::Registered
            },
            gateway,
            name,
            next_hello: now + cfg.heartbeat,
            next_probe: now + cfg.probe_period,
            cfg,
            bus,
            replies,
            acks,
            manifest,
            table: BTreeMap::new(),
            outbox: VecDeque::new(),
            seq: 0,
            hello_seq: 0,
            stats: AgentStats::default(),
        })
    }

    pub fn gateway(&self) -> Option<&Urn> {
        self.gateway.as_ref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn stats(&self) -> AgentStats {
        self.stats
    }

    pub fn entry(&self, urn: &Urn) -> Option<&NodeTableEntry> {
        self.table.get(urn)
    }

    pub fn entries(&self) -> impl Iterator<Item = &NodeTableEntry> {
        self.table.values()
    }

    /// Events waiting for the bus to come back.
    pub fn buffered(&self) -> usize {
        self.outbox.len()
    }

    pub fn members(&self) -> usize {
        self.table
            .values()
            .filter(|e| e.state == EntryState::Registered)
            .count()
    }

    fn running(&self, world: &World) -> bool {
        self.gateway.as_ref().is_none_or(|g| world.is_alive(g))
    }

    fn next_id(&mut self) -> CorrelationId {
        self.seq += 1;
        CorrelationId::derive(&self.name, self.seq)
    }

    fn gateway_text(&self) -> String {
        self.gateway.as_ref().map(|g| g.to_string()).unwrap_or_default()
    }

    fn emit(&mut self, event: ManagementEvent) {
        self.outbox.push_back(event);
        self.flush();
    }

    /// Publishes buffered events in order, stopping at the first failure.
    pub fn flush(&mut self) {
        while let Some(ev) = self.outbox.front() {
            match self.bus.publish_event(ev) {
                Ok(_) => {
                    self.outbox.pop_front();
                }
                Err(BusError::Unavailable | BusError::Io(_) | BusError::Disconnected) => return,
                Err(e) => {
                    tracing::error!(agent = %self.name, event = %ev.event_type, "dropping unpublishable event: {e}");
                    self.outbox.pop_front();
                }
            }
        }
    }

    /// Handles a service frame intercepted at the cluster head (or a GPRS
    /// uplink). Returns the observations to forward to the service plane;
    /// nothing is forwarded for nodes that are not registered yet.
    pub fn on_frame(
        &mut self,
        world: &mut World,
        source: &Urn,
        observations: Vec<Observation>,
        now: SimTime,
    ) -> Vec<Observation> {
        if !self.running(world) {
            return Vec::new();
        }
        if let Some(e) = self.table.get_mut(source) {
            e.last_frame_at = now;
            e.failures = 0;
            match e.state {
                EntryState::Registered => {
                    self.stats.observations_forwarded += observations.len() as u64;
                    return observations;
                }
                EntryState::Pending { since, .. } if now - since < self.cfg.registration_timeout => {
                    self.stats.suppressed += 1;
                    return Vec::new();
                }
                _ => {}
            }
        }
        self.register_node(world, source, now);
        Vec::new()
    }

    /// One Node API call, repeated while frames are lost on the way.
    fn call(&self, world: &mut World, urn: &Urn, op: &NodeApiOp) -> Result<NodeApiReply, SimError> {
        let mut last = Err(SimError::Unreachable(urn.clone()));
        for _ in 0..self.cfg.query_attempts {
            last = world.node_api(self.gateway.as_ref(), urn, op);
            if !matches!(last, Err(SimError::Unreachable(_))) {
                break;
            }
        }
        last
    }

    fn property(&self, world: &mut World, urn: &Urn, name: &str) -> Option<String> {
        let op = NodeApiOp::GetPropertyValue(name.to_string());
        match self.call(world, urn, &op) {
            Ok(NodeApiReply::Value(v)) => v,
            _ => None,
        }
    }

    /// Builds a description from the node's own answers. Any lost reply
    /// aborts; the next frame tries again.
    fn describe(&self, world: &mut World, urn: &Urn, now: SimTime) -> Option<ResourceDescription> {
        let mut props = BTreeMap::new();
        for name in ["mac", "role", "class", "sensors", "feeds-services", "battery", "free-memory", "cpu-load"] {
            props.insert(name, self.property(world, urn, name)?);
        }
        let role: NodeRole = props["role"].parse().ok()?;
        let capabilities = props["sensors"]
            .split(',')
            .filter(|s| !s.is_empty())
            .filter_map(|s| {
                let mut parts = s.split(':');
                let mut cap = Capability::new(parts.next()?, parts.next()?);
                cap.accuracy = parts.next().and_then(|a| a.parse().ok());
                Some(cap)
            })
            .collect();
        let (position, kind) = match &self.gateway {
            Some(_) => (Position::Fixed(*self.manifest.get(urn)?), ConnectionKind::Mesh),
            None => (Position::Mobile, ConnectionKind::Gprs),
        };
        let mut hw_meta = BTreeMap::new();
        hw_meta.insert(META_MAC.to_string(), props["mac"].clone());
        hw_meta.insert(META_CLASS.to_string(), props["class"].clone());
        hw_meta.insert(META_FEEDS_SERVICES.to_string(), props["feeds-services"].clone());
        hw_meta.insert(META_BATTERY.to_string(), props["battery"].clone());
        hw_meta.insert(META_FREE_MEMORY.to_string(), props["free-memory"].clone());
        hw_meta.insert(META_CPU_LOAD.to_string(), props["cpu-load"].clone());
        Some(ResourceDescription {
            urn: urn.clone(),
            role,
            capabilities,
            position,
            parent_gateway: self.gateway.clone(),
            connection: Connection {
                address: props["mac"].clone(),
                kind,
            },
            state: NodeState::Active,
            hw_meta,
            registered_at: now,
            last_seen: now,
        })
    }

    fn register_node(&mut self, world: &mut World, urn: &Urn, now: SimTime) {
        let entry = self.table.entry(urn.clone()).or_insert_with(|| NodeTableEntry {
            urn: urn.clone(),
            last_frame_at: now,
            failures: 0,
            battery: 0.0,
            free_memory: 0,
            cpu_load: 0.0,
            state: EntryState::Unregistered,
        });
        entry.state = EntryState::Unregistered;
        let Some(desc) = self.describe(world, urn, now) else {
            tracing::debug!(agent = %self.name, %urn, "property query lost, will retry");
            return;
        };
        let correlation = self.next_id();
        let entry = self.table.get_mut(urn).unwrap();
        entry.battery = desc.hw_meta[META_BATTERY].parse().unwrap_or(0.0);
        entry.free_memory = desc.hw_meta[META_FREE_MEMORY].parse().unwrap_or(0);
        entry.cpu_load = desc.hw_meta[META_CPU_LOAD].parse().unwrap_or(0.0);
        entry.state = EntryState::Pending {
            correlation,
            since: now,
        };
        let payload = Payload::new()
            .with_str(tags::URN, urn.to_string())
            .with_str(tags::DESCRIPTION, citytb_rd::doc::encode(&desc))
            .with_str(tags::GATEWAY, self.gateway_text());
        self.stats.registrations_sent += 1;
        self.emit(ManagementEvent::new(NODE_REG_REQUEST, correlation, now, payload));
    }

    fn register_gateway(&mut self, world: &World, now: SimTime) {
        let Some(gw) = self.gateway.clone() else {
            return;
        };
        let Some(g) = world.gateway(&gw) else {
            return;
        };
        let mut hw_meta = BTreeMap::new();
        hw_meta.insert(META_CLASS.to_string(), "gateway".to_string());
        hw_meta.insert(META_MAC.to_string(), g.mac.clone());
        let desc = ResourceDescription {
            urn: gw.clone(),
            role: NodeRole::Infrastructural,
            capabilities: Vec::new(),
            position: Position::Fixed(g.position),
            parent_gateway: None,
            connection: Connection {
                address: g.mac.clone(),
                kind: ConnectionKind::Wired,
            },
            state: NodeState::Active,
            hw_meta,
            registered_at: now,
            last_seen: now,
        };
        let correlation = self.next_id();
        self.gw_reg = GatewayReg::Pending(correlation, now);
        let payload = Payload::new()
            .with_str(tags::URN, gw.to_string())
            .with_str(tags::DESCRIPTION, citytb_rd::doc::encode(&desc))
            .with_str(tags::GATEWAY, gw.to_string());
        self.emit(ManagementEvent::new(GW_REG_REQUEST, correlation, now, payload));
    }

    /// Consumes registration replies and HELLO acknowledgements addressed
    /// to this agent. Returns how many were handled.
    pub fn pump(&mut self) -> usize {
        let mut handled = 0;
        loop {
            let d = match self.replies.try_recv() {
                Ok(Some(d)) => d,
                Ok(None) => break,
                Err(e) => {
                    tracing::warn!(agent = %self.name, "reply stream: {e}");
                    break;
                }
            };
            let ev = &d.event;
            let ok = ev.payload.bool(tags::OK).unwrap_or(false);
            if ev.event_type == GW_REG_REPLY {
                if matches!(self.gw_reg, GatewayReg::Pending(c, _) if c == ev.correlation_id) {
                    self.gw_reg = if ok {
                        GatewayReg::Registered
                    } else {
                        GatewayReg::Unregistered
                    };
                    handled += 1;
                }
            } else if let Some(urn) = ev.payload.str(tags::URN).and_then(|u| Urn::parse(u).ok()) {
                if let Some(e) = self.table.get_mut(&urn) {
                    if matches!(e.state, EntryState::Pending { correlation, .. } if correlation == ev.correlation_id)
                    {
                        e.state = if ok {
                            EntryState::Registered
                        } else {
                            tracing::info!(agent = %self.name, %urn, cause = ev.payload.str(tags::CAUSE).unwrap_or(""), "registration refused");
                            EntryState::Unregistered
                        };
                        handled += 1;
                    }
                }
            }
            let _ = self.replies.ack(d.position);
        }
        let mine = self.gateway_text();
        while let Ok(Some(d)) = self.acks.try_recv() {
            let ev = &d.event;
            let refused = ev.payload.bool(tags::OK) == Some(false);
            if ev.event_type == HELLO_ACK {
                if refused
                    && ev.payload.str(tags::GATEWAY) == Some(mine.as_str())
                    && self.gw_reg == GatewayReg::Registered
                {
                    // The portal no longer knows this gateway; register again.
                    self.gw_reg = GatewayReg::Unregistered;
                    handled += 1;
                }
            } else if refused {
                // Status for a node the portal has forgotten: the next frame
                // registers it afresh.
                let urn = ev.payload.str(tags::URN).and_then(|u| Urn::parse(u).ok());
                if let Some(e) = urn.and_then(|u| self.table.get_mut(&u)) {
                    if e.state == EntryState::Registered {
                        e.state = EntryState::Unregistered;
                        handled += 1;
                    }
                }
            }
            let _ = self.acks.ack(d.position);
        }
        handled
    }

    /// Runs timers due at `now`: gateway registration, HELLO and probes.
    /// Does nothing while the gateway itself is down.
    pub fn tick(&mut self, world: &mut World, now: SimTime) {
        if !self.running(world) {
            return;
        }
        self.flush();
        match self.gw_reg {
            GatewayReg::Unregistered => self.register_gateway(world, now),
            GatewayReg::Pending(_, since) if now - since >= self.cfg.registration_timeout => {
                self.register_gateway(world, now)
            }
            _ => {}
        }
        if self.gateway.is_some() && now >= self.next_hello {
            self.hello(now);
            self.next_hello = now + self.cfg.heartbeat;
        }
        if now >= self.next_probe {
            self.probe(world, now);
            self.next_probe = now + self.cfg.probe_period;
        }
    }

    fn hello(&mut self, now: SimTime) {
        self.hello_seq += 1;
        let payload = Payload::new()
            .with_str(tags::GATEWAY, self.gateway_text())
            .with_u64(tags::MEMBERS, self.members() as u64)
            .with_u64(tags::SEQ, self.hello_seq);
        let id = self.next_id();
        self.stats.hellos += 1;
        self.emit(ManagementEvent::new(HELLO, id, now, payload));
    }

    /// One probe round over every registered member.
    pub fn probe(&mut self, world: &mut World, now: SimTime) {
        let targets: Vec<Urn> = self
            .table
            .values()
            .filter(|e| e.state == EntryState::Registered)
            .map(|e| e.urn.clone())
            .collect();
        for urn in targets {
            self.stats.probes += 1;
            let alive = matches!(
                self.call(world, &urn, &NodeApiOp::IsAlive),
                Ok(NodeApiReply::Alive)
            );
            let battery = alive.then(|| self.property(world, &urn, "battery")).flatten();
            let memory = alive.then(|| self.property(world, &urn, "free-memory")).flatten();
            let load = alive.then(|| self.property(world, &urn, "cpu-load")).flatten();
            let gateway = self.gateway_text();
            let e = self.table.get_mut(&urn).unwrap();
            if alive {
                e.failures = 0;
                if let Some(b) = battery.and_then(|v| v.parse().ok()) {
                    e.battery = b;
                }
                if let Some(m) = memory.and_then(|v| v.parse().ok()) {
                    e.free_memory = m;
                }
                if let Some(l) = load.and_then(|v| v.parse().ok()) {
                    e.cpu_load = l;
                }
            } else {
                e.failures += 1;
            }
            let payload = Payload::new()
                .with_str(tags::URN, urn.to_string())
                .with_str(tags::GATEWAY, gateway)
                .with_bool(tags::ALIVE, alive)
                .with_f64(tags::BATTERY, e.battery)
                .with_u64(tags::FREE_MEMORY, e.free_memory)
                .with_f64(tags::CPU_LOAD, e.cpu_load);
            let failures = e.failures;
            let id = self.next_id();
            self.emit(ManagementEvent::new(NODE_STATUS_REQUEST, id, now, payload));
            if failures >= self.cfg.failure_threshold {
                self.table.get_mut(&urn).unwrap().state = EntryState::Dead;
                self.stats.invalidations += 1;
                let payload = Payload::new()
                    .with_str(tags::URN, urn.to_string())
                    .with_str(tags::GATEWAY, self.gateway_text())
                    .with_str(tags::REASON, format!("no answer to {failures} probes"));
                let id = self.next_id();
                self.emit(ManagementEvent::new(NODE_INVALIDATION_REQUEST, id, now, payload));
            }
        }
    }
}
