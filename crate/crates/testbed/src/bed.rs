use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::Receiver;
use std::sync::Arc;
use std::time::Duration;

use citytb_asi::ObservationStore;
use citytb_bus::tcp::{BusServer, RemoteBus};
use citytb_bus::{Broker, EventBus, ManagementEvent};
use citytb_core::{parse_duration, NodeRole, NodeState, Observation, SimTime, Urn};
use citytb_exp::{ControllerEvent, ExperimentRuntime, MotapConfig};
use citytb_mgmt::{
    AgentConfig, ExperimentConfigurator, GatewayAgent, PortalManager, ServiceConfigurator, Timeouts,
};
use citytb_rd::{Notification, Query, ResourceDirectory};
use citytb_sim::{SimEvent, World};

use crate::error::TestbedError;

#[derive(Debug, Clone)]
pub struct TestbedConfig {
    pub agent: AgentConfig,
    pub timeouts: Timeouts,
    pub users: Vec<(String, String)>,
    pub motap: MotapConfig,
    /// Simulated time per driver step.
    pub tick: Duration,
    /// Broker, directory and observation logs live here; in memory when unset.
    pub data_dir: Option<PathBuf>,
    /// Also serve the broker over TCP on this address.
    pub bus_listen: Option<String>,
    /// Gateway agents talk to the broker through its TCP port instead of
    /// in process. Needs `bus_listen`.
    pub agents_over_tcp: bool,
}

impl Default for TestbedConfig {
    fn default() -> Self {
        TestbedConfig {
            agent: AgentConfig::default(),
            timeouts: Timeouts::default(),
            users: vec![("alice".into(), "alice".into())],
            motap: MotapConfig::default(),
            tick: Duration::from_secs(1),
            data_dir: None,
            bus_listen: None,
            agents_over_tcp: false,
        }
    }
}

/// The simulated city with its whole control plane, driven on one thread.
///
/// Each [`step`](Testbed::step) advances the world by one tick, hands
/// service frames to the gateway agents, runs agent timers and then the
/// portal and runtime expiry, pumping the bus to quiescence in between.
pub struct Testbed {
    pub world: World,
    pub broker: Arc<Broker>,
    pub agents: Vec<GatewayAgent>,
    pub portal: PortalManager,
    pub exp: ExperimentConfigurator,
    pub svc: ServiceConfigurator,
    pub runtime: ExperimentRuntime,
    pub store: ObservationStore,
    pub tick: Duration,
    pub bus_server: Option<BusServer>,
    /// Observations a gateway forwarded but the store refused.
    pub rejected_obs: u64,
    controller: BTreeMap<u32, Vec<ControllerEvent>>,
    rd_subs: BTreeMap<u64, Receiver<Notification>>,
    asi_subs: BTreeMap<u64, Receiver<Observation>>,
}

impl Testbed {
    pub fn new(world: World, cfg: TestbedConfig) -> Result<Testbed, TestbedError> {
        let (broker, rd, store) = match &cfg.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                (
                    Broker::open(dir.join("bus"))?,
                    ResourceDirectory::open(dir.join("rd.log"))?,
                    ObservationStore::open(&dir.join("asi.log"))?,
                )
            }
            None => (Broker::in_memory(), ResourceDirectory::new(), ObservationStore::new()),
        };
        let bus: Arc<dyn EventBus> = Arc::new(broker.clone());
        let bus_server = match &cfg.bus_listen {
            Some(addr) => Some(BusServer::bind(addr.as_str(), broker.clone())?),
            None => None,
        };
        let agent_bus: Arc<dyn EventBus> = match (&bus_server, cfg.agents_over_tcp) {
            (Some(srv), true) => Arc::new(RemoteBus::connect(srv.local_addr())?),
            (None, true) => return Err(TestbedError::BadRequest("agents over TCP need a bus address".into())),
            _ => bus.clone(),
        };
        let now = world.now();
        let mut agents = Vec::new();
        for g in world.gateways() {
            agents.push(GatewayAgent::new(
                Some(g.urn.clone()),
                world.manifest(&g.urn),
                agent_bus.clone(),
                cfg.agent.clone(),
                now,
            )?);
        }
        agents.push(GatewayAgent::new(None, Default::default(), agent_bus, cfg.agent.clone(), now)?);
        Ok(Testbed {
            portal: PortalManager::new(rd, bus.clone(), cfg.timeouts)?,
            exp: ExperimentConfigurator::new(bus.clone())?,
            svc: ServiceConfigurator::new(bus)?,
            runtime: ExperimentRuntime::new(cfg.users, cfg.motap),
            store,
            agents,
            broker,
            world,
            tick: cfg.tick,
            bus_server,
            rejected_obs: 0,
            controller: BTreeMap::new(),
            rd_subs: BTreeMap::new(),
            asi_subs: BTreeMap::new(),
        })
    }

    pub fn from_seed(path: impl AsRef<Path>, cfg: TestbedConfig) -> Result<Testbed, TestbedError> {
        let path = path.as_ref();
        let world = World::load(path).map_err(|e| TestbedError::Topology(format!("{}: {e}", path.display())))?;
        Testbed::new(world, cfg)
    }

    pub fn now(&self) -> SimTime {
        self.world.now()
    }

    /// Pumps agents, portal and configurators until nobody has work left.
    pub fn settle(&mut self) {
        let now = self.now();
        loop {
            let mut n = 0;
            for a in &mut self.agents {
                n += a.pump();
            }
            n += self.portal.pump(now);
            n += self.exp.pump(&mut self.runtime, now);
            n += self.svc.pump(&mut self.store, now);
            if n == 0 {
                break;
            }
        }
    }

    pub fn step(&mut self) {
        let events = self.world.step(self.tick);
        let now = self.now();
        for ev in events {
            let (gw, source, obs) = match ev {
                SimEvent::ServiceFrame(f) => (Some(f.gateway), f.source, f.observations),
                SimEvent::GprsUplink(u) => (None, u.source, u.observations),
                _ => continue,
            };
            let Some(agent) = self.agents.iter_mut().find(|a| a.gateway() == gw.as_ref()) else {
                tracing::warn!(%source, "frame for a gateway without an agent");
                continue;
            };
            for o in agent.on_frame(&mut self.world, &source, obs, now) {
                if self.store.ingest(o).is_err() {
                    self.rejected_obs += 1;
                }
            }
        }
        self.settle();
        for a in &mut self.agents {
            a.tick(&mut self.world, now);
        }
        self.settle();
        self.portal.expire(now);
        self.runtime.expire(now);
        self.settle();
        self.collect_controller();
    }

    /// Steps until the clock reaches `t`.
    pub fn run_to(&mut self, t: SimTime) {
        while self.now() < t {
            self.step();
        }
    }

    pub fn run_for(&mut self, d: Duration) {
        let end = self.now() + d;
        self.run_to(end);
    }

    /// Steps until `done` holds or `limit` of simulated time has passed.
    pub fn run_until(&mut self, limit: Duration, mut done: impl FnMut(&Testbed) -> bool) -> bool {
        let end = self.now() + limit;
        while self.now() < end {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    /// Number of devices in the topology, gateways included.
    pub fn device_count(&self) -> usize {
        self.world.nodes().count() + self.world.gateways().count()
    }

    pub fn all_registered(&self) -> bool {
        self.portal.rd().count(&Query::all()) == self.device_count()
    }

    /// Cold start: steps until every device is Active in the directory.
    pub fn bring_up(&mut self, limit: Duration) -> Result<(), TestbedError> {
        if self.run_until(limit, |t| t.all_registered()) {
            Ok(())
        } else {
            Err(TestbedError::NotReady {
                registered: self.portal.rd().count(&Query::all()),
                expected: self.device_count(),
            })
        }
    }

    /// Accepts a full URN or a bare node id within the world's namespace.
    pub fn resolve(&self, id: &str) -> Result<Urn, TestbedError> {
        let urn = if id.contains(':') {
            Urn::parse(id)
        } else {
            Urn::new(self.world.authority(), self.world.testbed(), id)
        };
        urn.map_err(|e| TestbedError::BadRequest(format!("{id:?}: {e}")))
    }

    pub fn state(&self, urn: &Urn) -> Option<NodeState> {
        self.portal.rd().get(urn).map(|d| d.state)
    }

    pub fn role_of(&self, urn: &Urn) -> Option<NodeRole> {
        self.portal.rd().get(urn).map(|d| d.role)
    }

    /// Bus events of one type, oldest first.
    pub fn events(&self, event_type: &str) -> Vec<ManagementEvent> {
        self.broker
            .audit_log()
            .into_iter()
            .filter(|e| e.event.event_type == event_type)
            .map(|e| e.event)
            .collect()
    }

    pub fn set_timeouts(&mut self, t: Timeouts) {
        self.portal.set_timeouts(t);
    }

    fn collect_controller(&mut self) {
        let ids: Vec<u32> = self.runtime.sessions().map(|s| s.id).collect();
        for id in ids {
            let drained = self.runtime.drain_controller(id);
            if !drained.is_empty() {
                self.controller.entry(id).or_default().extend(drained);
            }
        }
    }

    /// Controller events of a session from position `since` on. Positions
    /// are stable, so a reader can resume where it left off.
    pub fn controller_events(&mut self, id: u32, since: usize) -> Vec<ControllerEvent> {
        self.collect_controller();
        self.controller
            .get(&id)
            .map(|v| v.get(since..).unwrap_or_default().to_vec())
            .unwrap_or_default()
    }

    pub fn subscribe_rd(&mut self, query: Query) -> u64 {
        let (tx, rx) = std::sync::mpsc::channel();
        let id = self.portal.rd_mut().subscribe(query, tx);
        self.rd_subs.insert(id, rx);
        id
    }

    /// Pending notifications of a directory subscription; `None` if unknown.
    pub fn poll_rd(&mut self, id: u64) -> Option<Vec<Notification>> {
        self.rd_subs.get(&id).map(|rx| rx.try_iter().collect())
    }

    pub fn subscribe_asi(&mut self, filter: citytb_asi::Filter) -> u64 {
        let (id, rx) = self.store.subscribe(filter);
        self.asi_subs.insert(id, rx);
        id
    }

    pub fn poll_asi(&mut self, id: u64) -> Option<Vec<Observation>> {
        self.asi_subs.get(&id).map(|rx| rx.try_iter().collect())
    }
}

/// Reads an instant: `+30s` is relative to `now`, anything else is a
/// duration since the start of the run (`0s`, `14d`, or bare milliseconds).
pub fn parse_instant(text: &str, now: SimTime) -> Result<SimTime, TestbedError> {
    let bad = |e: citytb_core::ModelError| TestbedError::BadRequest(format!("bad instant {text:?}: {e}"));
    match text.strip_prefix('+') {
        Some(rel) => Ok(now + parse_duration(rel).map_err(bad)?),
        None => Ok(SimTime::ZERO + parse_duration(text).map_err(bad)?),
    }
}
