use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::time::Duration;

use citytb_core::{checksum, ConnectionKind, GeoPoint, NodeImage, Observation, SimTime, Urn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behavior::{self, boot_banner};
use crate::env::{fnv1a, splitmix64, Environment, FNV_OFFSET};
use crate::error::{SimError, TopologyError};
use crate::event::{FaultKind, FrameKind, GprsUplink, Plane, ServiceFrame, SimEvent, TraceRecord};
use crate::link::LinkModel;
use crate::node::{InstalledImage, Mobility, Radios, SimGateway, SimNode};
use crate::topology::{edge, ClusterTopology, RouteTable, TopologyFile};

/// Granularity at which vehicle/lamppost contacts are evaluated.
pub const CONTACT_TICK: Duration = Duration::from_secs(1);

/// Commands understood by the on-node management API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeApiOp {
    IsAlive,
    GetPropertyValue(String),
    Reset,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeApiReply {
    Alive,
    Value(Option<String>),
    Rebooted { banner: Vec<u8> },
}

/// Output produced by a node on the experimentation plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeOutput {
    pub source: Urn,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone)]
struct ScheduledFault {
    at: SimTime,
    seq: u64,
    target: Urn,
    kind: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Agenda {
    Fault(u64),
    Contacts,
    Emission(Urn),
}

/// The simulated deployment. Owned by a single driver; nothing inside is shared.
pub struct World {
    authority: String,
    testbed: String,
    link: LinkModel,
    rng: ChaCha8Rng,
    now: SimTime,
    nodes: BTreeMap<Urn, SimNode>,
    gateways: BTreeMap<Urn, SimGateway>,
    clusters: BTreeMap<Urn, ClusterTopology>,
    edge_loss: HashMap<(Urn, Urn), f64>,
    faults: Vec<ScheduledFault>,
    fault_seq: u64,
    routes: RefCell<HashMap<Urn, RouteTable>>,
    exp_adjacency: BTreeMap<Urn, BTreeSet<Urn>>,
    grid: SpatialGrid,
    contacts: BTreeSet<(Urn, Urn)>,
    pub environment: Environment,
    trace: Vec<TraceRecord>,
    record_trace: bool,
    frames_sent: HashMap<FrameKind, u64>,
}

/// Loads a seed file into cluster graphs and simulated nodes.
pub fn load_topology(
    path: impl AsRef<Path>,
) -> Result<(Vec<ClusterTopology>, Vec<SimNode>), TopologyError> {
    let world = World::load(path)?;
    Ok((
        world.clusters.values().cloned().collect(),
        world.nodes.values().cloned().collect(),
    ))
}

impl World {
    pub fn load(path: impl AsRef<Path>) -> Result<World, TopologyError> {
        World::from_file(&TopologyFile::read(path)?)
    }

    pub fn parse(text: &str) -> Result<World, TopologyError> {
        World::from_file(&TopologyFile::parse(text)?)
    }

    pub fn from_file(file: &TopologyFile) -> Result<World, TopologyError> {
        let clusters = file.clusters()?;
        let seed = file.link.seed;
        let gateways: BTreeMap<Urn, SimGateway> = file
            .gateways
            .iter()
            .map(|g| {
                (
                    g.urn.clone(),
                    SimGateway {
                        urn: g.urn.clone(),
                        position: g.position,
                        uplink: g.uplink,
                        alive: true,
                        mac: mac_for(seed, &g.urn),
                    },
                )
            })
            .collect();
        let mut nodes = BTreeMap::new();
        for spec in &file.nodes {
            let cluster = spec
                .cluster
                .as_ref()
                .map(|c| file.gateways.iter().find(|g| g.urn.node_id() == c).unwrap().urn.clone());
            let mobility = if spec.is_mobile() {
                Mobility::Route {
                    waypoints: spec.route.clone(),
                    speed_mps: spec.speed_mps,
                }
            } else {
                Mobility::Fixed(spec.position.expect("fixed node position"))
            };
            let radios = match (&mobility, spec.class.as_str()) {
                (Mobility::Route { .. }, _) => Radios {
                    experimentation: true,
                    management: false,
                    gprs: true,
                },
                (_, "repeater") => Radios {
                    experimentation: false,
                    management: true,
                    gprs: false,
                },
                _ => Radios {
                    experimentation: true,
                    management: true,
                    gprs: false,
                },
            };
            let h = splitmix64(fnv1a(spec.urn.node_id().as_bytes(), FNV_OFFSET) ^ seed);
            let period_ms = spec.period.as_millis() as u64;
            // Stagger first emissions over one period, on whole seconds where possible.
            let offset = if period_ms >= 1000 {
                (h % (period_ms / 1000)) * 1000 + 1000
            } else {
                h % period_ms + 1
            };
            nodes.insert(
                spec.urn.clone(),
                SimNode {
                    urn: spec.urn.clone(),
                    role: spec.role,
                    class: spec.class.clone(),
                    mobility,
                    radios,
                    cluster,
                    sensors: spec.sensors.clone(),
                    feeds_services: spec.feeds_services,
                    emission_period: spec.period,
                    battery: spec.battery,
                    free_memory: 2048 + (h >> 16) % 4096,
                    cpu_load: ((h >> 32) % 40) as f64 / 100.0,
                    mac: mac_for(seed, &spec.urn),
                    installed: InstalledImage::factory(&spec.behavior),
                    alive: true,
                    next_emission: SimTime(offset.min(period_ms)),
                    boot_count: 0,
                    behavior_state: 0,
                },
            );
        }
        let mut world = World {
            authority: file.authority.clone(),
            testbed: file.testbed.clone(),
            link: file.link,
            rng: ChaCha8Rng::seed_from_u64(seed),
            now: SimTime::ZERO,
            nodes,
            gateways,
            clusters: clusters
                .into_iter()
                .map(|c| (c.gateway.clone(), c))
                .collect(),
            edge_loss: HashMap::new(),
            faults: Vec::new(),
            fault_seq: 0,
            routes: RefCell::new(HashMap::new()),
            exp_adjacency: BTreeMap::new(),
            grid: SpatialGrid::new(file.link.radio_range_m, 43.0),
            contacts: BTreeSet::new(),
            environment: Environment::new(seed),
            trace: Vec::new(),
            record_trace: true,
            frames_sent: HashMap::new(),
        };
        world.build_experiment_plane();
        Ok(world)
    }

    fn build_experiment_plane(&mut self) {
        let mut fixed: Vec<(Urn, GeoPoint)> = self
            .gateways
            .values()
            .map(|g| (g.urn.clone(), g.position))
            .collect();
        fixed.extend(self.nodes.values().filter_map(|n| {
            (n.radios.experimentation)
                .then(|| n.fixed_position().map(|p| (n.urn.clone(), p)))
                .flatten()
        }));
        let lat0 = fixed.first().map(|f| f.1.lat).unwrap_or(43.0);
        self.grid = SpatialGrid::new(self.link.radio_range_m, lat0);
        for (urn, p) in &fixed {
            self.grid.insert(urn.clone(), *p);
            self.exp_adjacency.entry(urn.clone()).or_default();
        }
        let range = self.link.radio_range_m;
        for (urn, p) in &fixed {
            for (other, q) in self.grid.near(p) {
                if other != urn && p.distance_m(q) <= range {
                    self.exp_adjacency
                        .get_mut(urn)
                        .unwrap()
                        .insert(other.clone());
                }
            }
        }
    }

    pub fn authority(&self) -> &str {
        &self.authority
    }

    pub fn testbed(&self) -> &str {
        &self.testbed
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SimNode> {
        self.nodes.values()
    }

    pub fn node(&self, urn: &Urn) -> Option<&SimNode> {
        self.nodes.get(urn)
    }

    pub fn gateways(&self) -> impl Iterator<Item = &SimGateway> {
        self.gateways.values()
    }

    pub fn gateway(&self, urn: &Urn) -> Option<&SimGateway> {
        self.gateways.get(urn)
    }

    pub fn clusters(&self) -> impl Iterator<Item = &ClusterTopology> {
        self.clusters.values()
    }

    pub fn cluster(&self, gateway: &Urn) -> Option<&ClusterTopology> {
        self.clusters.get(gateway)
    }

    pub fn contains(&self, urn: &Urn) -> bool {
        self.nodes.contains_key(urn) || self.gateways.contains_key(urn)
    }

    pub fn is_alive(&self, urn: &Urn) -> bool {
        self.nodes
            .get(urn)
            .map(|n| n.alive)
            .or_else(|| self.gateways.get(urn).map(|g| g.alive))
            .unwrap_or(false)
    }

    /// Static positions of a cluster's members, as known to its gateway.
    pub fn manifest(&self, gateway: &Urn) -> BTreeMap<Urn, GeoPoint> {
        self.clusters
            .get(gateway)
            .map(|c| {
                c.members
                    .iter()
                    .filter_map(|m| Some((m.clone(), self.nodes.get(m)?.fixed_position()?)))
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn set_record_trace(&mut self, on: bool) {
        self.record_trace = on;
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn frames_sent(&self, kind: FrameKind) -> u64 {
        self.frames_sent.get(&kind).copied().unwrap_or(0)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn set_battery(&mut self, urn: &Urn, percent: f64) -> Result<(), SimError> {
        let node = self
            .nodes
            .get_mut(urn)
            .ok_or_else(|| SimError::UnknownUrn(urn.clone()))?;
        node.battery = percent.clamp(0.0, 100.0);
        Ok(())
    }

    /// Records a frame crossing the radio networks.
    pub fn record(&mut self, kind: FrameKind, hops: Vec<Urn>) {
        *self.frames_sent.entry(kind).or_default() += hops.len().saturating_sub(1).max(1) as u64;
        if self.record_trace {
            self.trace.push(TraceRecord {
                at: self.now,
                plane: kind.plane(),
                kind,
                hops,
            });
        }
    }

    pub fn inject_fault(&mut self, target: &Urn, kind: FaultKind, at: SimTime) -> Result<(), SimError> {
        if !self.contains(target) {
            return Err(SimError::UnknownUrn(target.clone()));
        }
        if let FaultKind::LinkDegrade(p) = kind {
            assert!((0.0..=1.0).contains(&p), "loss must lie in [0, 1]");
        }
        self.fault_seq += 1;
        self.faults.push(ScheduledFault {
            at: at.max(self.now),
            seq: self.fault_seq,
            target: target.clone(),
            kind,
        });
        self.faults.sort_by_key(|f| (f.at, f.seq));
        Ok(())
    }

    fn apply_fault(&mut self, fault: &ScheduledFault) {
        let target = &fault.target;
        match fault.kind {
            FaultKind::NodeDeath | FaultKind::GatewayDeath => {
                if let Some(g) = self.gateways.get_mut(target) {
                    g.alive = false;
                }
                if let Some(n) = self.nodes.get_mut(target) {
                    n.alive = false;
                }
            }
            FaultKind::Revive => {
                if let Some(g) = self.gateways.get_mut(target) {
                    g.alive = true;
                }
                if let Some(n) = self.nodes.get_mut(target) {
                    if !n.alive {
                        n.alive = true;
                        n.next_emission = fault.at + n.emission_period;
                        n.boot_count += 1;
                    }
                }
            }
            FaultKind::LinkDegrade(p) => {
                let cluster = self
                    .gateways
                    .contains_key(target)
                    .then(|| target.clone())
                    .or_else(|| self.nodes.get(target).and_then(|n| n.cluster.clone()));
                if let Some(c) = cluster.and_then(|c| self.clusters.get(&c)) {
                    let edges: Vec<_> = c.neighbors(target).map(|n| edge(target, n)).collect();
                    for e in edges {
                        self.edge_loss.insert(e, p);
                    }
                }
            }
        }
        self.routes.borrow_mut().clear();
    }

    /// Effective loss probability of a management edge.
    pub fn mesh_loss(&self, a: &Urn, b: &Urn) -> f64 {
        self.edge_loss
            .get(&edge(a, b))
            .copied()
            .unwrap_or(self.link.loss)
    }

    fn edge_usable(&self, a: &Urn, b: &Urn) -> bool {
        self.mesh_loss(a, b) < 1.0
    }

    /// Current shortest-hop routing table of a cluster.
    pub fn route_table(&self, gateway: &Urn) -> Option<RouteTable> {
        if let Some(t) = self.routes.borrow().get(gateway) {
            return Some(t.clone());
        }
        let cluster = self.clusters.get(gateway)?;
        let table = cluster.route_table(|u| self.is_alive(u), |a, b| self.edge_usable(a, b));
        self.routes
            .borrow_mut()
            .insert(gateway.clone(), table.clone());
        Some(table)
    }

    /// Minimal-hop path from a cluster member to its gateway over surviving
    /// management edges, ties broken by lowest node id.
    pub fn route_management_frame(&self, from: &Urn) -> Result<Vec<Urn>, SimError> {
        let node = self
            .nodes
            .get(from)
            .ok_or_else(|| SimError::UnknownUrn(from.clone()))?;
        let gw = node
            .cluster
            .as_ref()
            .ok_or_else(|| SimError::NotClusterMember(from.clone()))?;
        let routes = self.routes.borrow();
        if let Some(t) = routes.get(gw) {
            return t.path(from);
        }
        drop(routes);
        self.route_table(gw).expect("cluster exists").path(from)
    }

    /// Sends one frame hop by hop along `hops`, drawing loss per hop.
    /// Returns the hop `(from, to)` where it was lost, if any.
    fn transmit(&mut self, hops: &[Urn]) -> Option<(Urn, Urn)> {
        for pair in hops.windows(2) {
            let loss = self.mesh_loss(&pair[0], &pair[1]);
            let lost = if loss <= 0.0 {
                false
            } else if loss >= 1.0 {
                true
            } else {
                self.rng.gen::<f64>() < loss
            };
            if lost {
                return Some((pair[0].clone(), pair[1].clone()));
            }
        }
        None
    }

    /// Advances the clock by `dt` and returns everything that happened, in
    /// deterministic order.
    pub fn step(&mut self, dt: Duration) -> Vec<SimEvent> {
        assert!(!dt.is_zero(), "step needs dt > 0");
        let t0 = self.now;
        let t1 = t0 + dt;
        let mut agenda: Vec<(SimTime, Agenda)> = Vec::new();
        let due = self.faults.iter().take_while(|f| f.at <= t1).count();
        let faults: Vec<ScheduledFault> = self.faults.drain(..due).collect();
        agenda.extend(faults.iter().map(|f| (f.at, Agenda::Fault(f.seq))));
        for node in self.nodes.values_mut() {
            while node.next_emission <= t1 {
                agenda.push((node.next_emission, Agenda::Emission(node.urn.clone())));
                node.next_emission = node.next_emission + node.emission_period;
            }
        }
        if self.nodes.values().any(|n| n.mobility.is_mobile()) {
            let tick = CONTACT_TICK.as_millis() as u64;
            let mut t = (t0.as_millis() / tick + 1) * tick;
            while t <= t1.as_millis() {
                agenda.push((SimTime(t), Agenda::Contacts));
                t += tick;
            }
        }
        agenda.sort();

        let mut events = Vec::new();
        for (at, item) in agenda {
            self.now = at;
            match item {
                Agenda::Fault(seq) => {
                    let fault = faults.iter().find(|f| f.seq == seq).unwrap().clone();
                    self.apply_fault(&fault);
                    events.push(SimEvent::Fault {
                        at,
                        target: fault.target,
                        kind: fault.kind,
                    });
                }
                Agenda::Contacts => self.update_contacts(at, &mut events),
                Agenda::Emission(urn) => self.emit(at, &urn, &mut events),
            }
        }
        self.now = t1;
        events
    }

    fn emit(&mut self, at: SimTime, urn: &Urn, events: &mut Vec<SimEvent>) {
        let node = &self.nodes[urn];
        // Repeaters have no sensors but still emit empty keep-alive frames.
        if !node.alive {
            return;
        }
        let (position, motion) = node.mobility.at(at);
        let observations: Vec<Observation> = node
            .sensors
            .iter()
            .map(|cap| Observation {
                source: urn.clone(),
                phenomenon: cap.phenomenon.clone(),
                value: self.environment.sample(urn, &cap.phenomenon, at),
                unit: cap.unit.clone(),
                position,
                timestamp: at,
                motion,
            })
            .collect();
        let cluster = node.cluster.clone();
        let node = self.nodes.get_mut(urn).unwrap();
        node.battery = (node.battery - 0.0005).max(0.0);

        let Some(gateway) = cluster else {
            self.record(FrameKind::Gprs, vec![urn.clone()]);
            events.push(SimEvent::GprsUplink(GprsUplink {
                at,
                source: urn.clone(),
                observations,
            }));
            return;
        };
        let path = match self.route_management_frame(urn) {
            Ok(p) => p,
            Err(_) => {
                events.push(SimEvent::NoRoute {
                    at,
                    source: urn.clone(),
                });
                return;
            }
        };
        let mut hops = Vec::with_capacity(path.len() + 1);
        hops.push(urn.clone());
        hops.extend(path.iter().cloned());
        let lost = self.transmit(&hops);
        match lost {
            Some((from, to)) => {
                let upto = hops.iter().position(|h| h == &to).unwrap();
                self.record(FrameKind::Service, hops[..=upto].to_vec());
                events.push(SimEvent::FrameLost {
                    at,
                    source: urn.clone(),
                    from,
                    to,
                });
            }
            None => {
                self.record(FrameKind::Service, hops);
                events.push(SimEvent::ServiceFrame(ServiceFrame {
                    emitted_at: at,
                    delivered_at: at + Duration::from_millis(self.link.latency_ms * path.len() as u64),
                    source: urn.clone(),
                    gateway,
                    path,
                    observations,
                }));
            }
        }
    }

    fn update_contacts(&mut self, at: SimTime, events: &mut Vec<SimEvent>) {
        let range = self.link.radio_range_m;
        let mut current = BTreeSet::new();
        for node in self.nodes.values().filter(|n| n.mobility.is_mobile() && n.alive) {
            let (pos, _) = node.mobility.at(at);
            for (fixed, q) in self.grid.near(&pos) {
                if self.is_alive(fixed) && pos.distance_m(q) <= range {
                    current.insert((node.urn.clone(), fixed.clone()));
                }
            }
        }
        for (mobile, fixed) in current.difference(&self.contacts) {
            events.push(SimEvent::Contact {
                at,
                mobile: mobile.clone(),
                fixed: fixed.clone(),
                begin: true,
            });
        }
        for (mobile, fixed) in self.contacts.difference(&current) {
            events.push(SimEvent::Contact {
                at,
                mobile: mobile.clone(),
                fixed: fixed.clone(),
                begin: false,
            });
        }
        self.contacts = current;
    }

    /// Whether two devices can exchange experimentation frames right now.
    pub fn experiment_link_up(&self, a: &Urn, b: &Urn) -> bool {
        self.experiment_link_at(a, b, self.now)
    }

    fn experiment_link_at(&self, a: &Urn, b: &Urn, at: SimTime) -> bool {
        let pos = |u: &Urn| -> Option<GeoPoint> {
            if let Some(g) = self.gateways.get(u) {
                return Some(g.position);
            }
            let n = self.nodes.get(u)?;
            n.radios.experimentation.then(|| n.mobility.at(at).0)
        };
        match (pos(a), pos(b)) {
            (Some(p), Some(q)) => a != b && p.distance_m(&q) <= self.link.radio_range_m,
            _ => false,
        }
    }

    /// Experiment-plane neighbors of a device at the current tick.
    pub fn experiment_neighbors(&self, urn: &Urn) -> Vec<Urn> {
        if let Some(adj) = self.exp_adjacency.get(urn) {
            let mut out: Vec<Urn> = adj.iter().cloned().collect();
            out.extend(
                self.contacts
                    .iter()
                    .filter(|(_, f)| f == urn)
                    .map(|(m, _)| m.clone()),
            );
            out.sort();
            out
        } else if let Some(node) = self.nodes.get(urn) {
            if !node.radios.experimentation {
                return Vec::new();
            }
            let (pos, _) = node.mobility.at(self.now);
            let mut out: Vec<Urn> = self
                .grid
                .near(&pos)
                .filter(|(u, q)| pos.distance_m(q) <= self.link.radio_range_m && *u != urn)
                .map(|(u, _)| u.clone())
                .collect();
            out.sort();
            out
        } else {
            Vec::new()
        }
    }

    fn experiment_path(&self, gateway: &Urn, target: &Urn) -> Option<Vec<Urn>> {
        let mut prev: HashMap<Urn, Urn> = HashMap::new();
        let mut queue = VecDeque::from([gateway.clone()]);
        let mut seen = BTreeSet::from([gateway.clone()]);
        while let Some(u) = queue.pop_front() {
            if &u == target {
                let mut path = vec![u.clone()];
                let mut cur = &u;
                while let Some(p) = prev.get(cur) {
                    path.push(p.clone());
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for v in self.experiment_neighbors(&u) {
                if self.is_alive(&v) && seen.insert(v.clone()) {
                    prev.insert(v.clone(), u.clone());
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Delivers an experiment payload to `target` and runs its program.
    ///
    /// Fixed nodes are reached from their cluster head over the
    /// experimentation radios; vehicles over their GPRS link.
    pub fn deliver_experiment(&mut self, target: &Urn, payload: &[u8]) -> Result<Vec<NodeOutput>, SimError> {
        let node = self
            .nodes
            .get(target)
            .ok_or_else(|| SimError::UnknownUrn(target.clone()))?;
        if !node.alive {
            return Err(SimError::Unreachable(target.clone()));
        }
        match node.cluster.clone() {
            None => self.record(FrameKind::Experiment, vec![target.clone()]),
            Some(gw) => {
                if !self.is_alive(&gw) {
                    return Err(SimError::GatewayDown(gw));
                }
                let path = self
                    .experiment_path(&gw, target)
                    .ok_or_else(|| SimError::Unreachable(target.clone()))?;
                self.record(FrameKind::Experiment, path);
            }
        }
        let mut outputs = Vec::new();
        let mut queue = VecDeque::from([(target.clone(), payload.to_vec())]);
        let mut reached = BTreeSet::from([target.clone()]);
        while let Some((urn, msg)) = queue.pop_front() {
            let node = self.nodes.get_mut(&urn).unwrap();
            let reaction = behavior::on_message(node, &msg);
            outputs.extend(reaction.outputs.into_iter().map(|p| NodeOutput {
                source: urn.clone(),
                payload: p,
            }));
            if let Some(fwd) = reaction.rebroadcast {
                for n in self.experiment_neighbors(&urn) {
                    let floods = self
                        .nodes
                        .get(&n)
                        .is_some_and(|x| x.alive && x.installed.behavior == behavior::FLOOD_ROUTING);
                    if floods && reached.insert(n.clone()) {
                        self.record(FrameKind::Experiment, vec![urn.clone(), n.clone()]);
                        queue.push_back((n, fwd.clone()));
                    }
                }
            }
        }
        Ok(outputs)
    }

    /// Management-plane path from a gateway to one of its members, gateway first.
    fn downlink_hops(&self, gateway: &Urn, target: &Urn) -> Result<Vec<Urn>, SimError> {
        let mut hops = self.route_management_frame(target)?;
        hops.pop();
        hops.reverse();
        hops.insert(0, gateway.clone());
        hops.push(target.clone());
        Ok(hops)
    }

    /// Executes a Node API command issued by `gateway` (or over GPRS for
    /// vehicles when `gateway` is `None`). Commands and replies travel the
    /// management mesh and are subject to its loss.
    pub fn node_api(
        &mut self,
        gateway: Option<&Urn>,
        target: &Urn,
        op: &NodeApiOp,
    ) -> Result<NodeApiReply, SimError> {
        let node = self
            .nodes
            .get(target)
            .ok_or_else(|| SimError::UnknownUrn(target.clone()))?;
        match gateway {
            Some(gw) => {
                if node.cluster.as_ref() != Some(gw) {
                    return Err(SimError::NotClusterMember(target.clone()));
                }
                if !self.is_alive(gw) {
                    return Err(SimError::GatewayDown(gw.clone()));
                }
                if !node.alive {
                    return Err(SimError::Unreachable(target.clone()));
                }
                let down = self
                    .downlink_hops(gw, target)
                    .map_err(|_| SimError::Unreachable(target.clone()))?;
                if let Some((_, to)) = self.transmit(&down) {
                    let upto = down.iter().position(|h| h == &to).unwrap();
                    self.record(FrameKind::NodeApi, down[..=upto].to_vec());
                    return Err(SimError::Unreachable(target.clone()));
                }
                self.record(FrameKind::NodeApi, down.clone());
                let up: Vec<Urn> = down.into_iter().rev().collect();
                let lost = self.transmit(&up);
                self.record(FrameKind::NodeApi, up);
                if lost.is_some() {
                    return Err(SimError::Unreachable(target.clone()));
                }
            }
            None => {
                if node.cluster.is_some() {
                    return Err(SimError::NotClusterMember(target.clone()));
                }
                if !node.alive {
                    return Err(SimError::Unreachable(target.clone()));
                }
                self.record(FrameKind::Gprs, vec![target.clone()]);
            }
        }
        let node = self.nodes.get_mut(target).unwrap();
        Ok(match op {
            NodeApiOp::IsAlive => NodeApiReply::Alive,
            NodeApiOp::GetPropertyValue(name) => NodeApiReply::Value(property(node, name)),
            NodeApiOp::Reset => {
                node.boot_count += 1;
                node.behavior_state = 0;
                NodeApiReply::Rebooted {
                    banner: boot_banner(node),
                }
            }
        })
    }

    /// Reboots a node, keeping its image.
    pub fn reset(&mut self, target: &Urn) -> Result<NodeOutput, SimError> {
        let gw = self
            .nodes
            .get(target)
            .ok_or_else(|| SimError::UnknownUrn(target.clone()))?
            .cluster
            .clone();
        match self.node_api(gw.as_ref(), target, &NodeApiOp::Reset)? {
            NodeApiReply::Rebooted { banner } => Ok(NodeOutput {
                source: target.clone(),
                payload: banner,
            }),
            _ => unreachable!("reset replies with a reboot"),
        }
    }

    /// Installs a fully received image and reboots the node into it.
    ///
    /// `received` is the reassembled transfer; it must match the image
    /// checksum or nothing changes.
    pub fn install_image(
        &mut self,
        target: &Urn,
        image: &NodeImage,
        received: &[u8],
    ) -> Result<NodeOutput, SimError> {
        if !behavior::is_known(&image.behavior) {
            return Err(SimError::UnknownBehavior(image.behavior.clone()));
        }
        let node = self
            .nodes
            .get_mut(target)
            .ok_or_else(|| SimError::UnknownUrn(target.clone()))?;
        if checksum(received) != image.checksum() {
            return Err(SimError::ChecksumMismatch(target.clone()));
        }
        node.installed = InstalledImage {
            image_id: image.image_id.clone(),
            behavior: image.behavior.clone(),
            version: node.installed.version + 1,
        };
        node.boot_count += 1;
        node.behavior_state = 0;
        Ok(NodeOutput {
            source: target.clone(),
            payload: boot_banner(node),
        })
    }

    /// Checks that every recorded frame stayed on the network of its plane:
    /// management frames only over mesh edges of one cluster (or a vehicle's
    /// GPRS link), experiment frames only between devices in radio range.
    pub fn audit_planes(&self) -> Result<(), String> {
        for rec in &self.trace {
            if rec.plane != rec.kind.plane() {
                return Err(format!("{rec:?} tagged with the wrong plane"));
            }
            for pair in rec.hops.windows(2) {
                let ok = match rec.plane {
                    Plane::Management => self
                        .clusters
                        .values()
                        .any(|c| c.mesh_edges.contains(&edge(&pair[0], &pair[1]))),
                    Plane::Experimentation => self.experiment_link_at(&pair[0], &pair[1], rec.at),
                };
                if !ok {
                    return Err(format!(
                        "{:?} frame crossed {} -> {} outside its plane",
                        rec.kind, pair[0], pair[1]
                    ));
                }
            }
        }
        Ok(())
    }

    /// Connection kind a device uses towards the portal.
    pub fn connection_kind(&self, urn: &Urn) -> Option<ConnectionKind> {
        self.gateways
            .get(urn)
            .map(|g| g.uplink)
            .or_else(|| self.nodes.get(urn).map(|n| n.connection_kind()))
    }
}

fn property(node: &SimNode, name: &str) -> Option<String> {
    Some(match name {
        "mac" => node.mac.clone(),
        "battery" => format!("{:.1}", node.battery),
        "free-memory" => node.free_memory.to_string(),
        "cpu-load" => format!("{:.2}", node.cpu_load),
        "role" => node.role.to_string(),
        "class" => node.class.clone(),
        "sensors" => node
            .sensors
            .iter()
            .map(|c| match c.accuracy {
                Some(a) => format!("{}:{}:{a}", c.phenomenon, c.unit),
                None => format!("{}:{}", c.phenomenon, c.unit),
            })
            .collect::<Vec<_>>()
            .join(","),
        "feeds-services" => node.feeds_services.to_string(),
        "image" => node.installed.behavior.clone(),
        "image-version" => node.installed.version.to_string(),
        "emission-period" => node.emission_period.as_millis().to_string(),
        _ => return None,
    })
}

fn mac_for(seed: u64, urn: &Urn) -> String {
    let h = splitmix64(fnv1a(urn.node_id().as_bytes(), FNV_OFFSET) ^ seed.rotate_left(17));
    format!("0013A200{:08X}", h as u32)
}

/// Buckets fixed positions into cells at least one radio range wide.
struct SpatialGrid {
    lat_cell: f64,
    lon_cell: f64,
    cells: HashMap<(i64, i64), Vec<(Urn, GeoPoint)>>,
}

impl SpatialGrid {
    fn new(range_m: f64, ref_lat: f64) -> Self {
        let lat_cell = (range_m / 111_000.0).max(1e-6);
        let lon_cell = (range_m / (111_000.0 * ref_lat.to_radians().cos().abs().max(0.05))).max(1e-6);
        SpatialGrid {
            lat_cell,
            lon_cell,
            cells: HashMap::new(),
        }
    }

    fn key(&self, p: &GeoPoint) -> (i64, i64) {
        (
            (p.lat / self.lat_cell).floor() as i64,
            (p.lon / self.lon_cell).floor() as i64,
        )
    }

    fn insert(&mut self, urn: Urn, p: GeoPoint) {
        let key = self.key(&p);
        self.cells.entry(key).or_default().push((urn, p));
    }

    fn near<'a>(&'a self, p: &GeoPoint) -> impl Iterator<Item = (&'a Urn, &'a GeoPoint)> + 'a {
        let (ci, cj) = self.key(p);
        (-1..=1)
            .flat_map(move |di| (-1..=1).map(move |dj| (ci + di, cj + dj)))
            .filter_map(move |k| self.cells.get(&k))
            .flatten()
            .map(|(u, q)| (u, q))
    }
}
