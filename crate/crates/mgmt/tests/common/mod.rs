#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use citytb_asi::ObservationStore;
use citytb_bus::{tags, Broker, EventBus, ManagementEvent};
use citytb_core::{NodeRole, NodeState, SimTime, Urn};
use citytb_exp::{ExperimentRuntime, MotapConfig};
use citytb_mgmt::{AgentConfig, ExperimentConfigurator, GatewayAgent, PortalManager, ServiceConfigurator, Timeouts};
use citytb_rd::{Predicate, Query, ResourceDirectory};
use citytb_sim::{SimEvent, World};

pub fn urn(id: &str) -> Urn {
    Urn::new("smartsantander", "santander", id).unwrap()
}

pub fn seed(name: &str) -> String {
    let path = format!("{}/../../seeds/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

/// The whole management plane on one thread, stepped a second at a time.
pub struct Plane {
    pub world: World,
    pub broker: Arc<Broker>,
    pub agents: Vec<GatewayAgent>,
    pub portal: PortalManager,
    pub exp: ExperimentConfigurator,
    pub svc: ServiceConfigurator,
    pub runtime: ExperimentRuntime,
    pub store: ObservationStore,
    pub rejected_obs: usize,
}

impl Plane {
    pub fn new(topo: &str) -> Plane {
        Plane::with(topo, AgentConfig::default(), Timeouts::default())
    }

    pub fn with(topo: &str, cfg: AgentConfig, timeouts: Timeouts) -> Plane {
        let world = World::parse(topo).unwrap();
        let broker = Broker::in_memory();
        let bus: Arc<dyn EventBus> = Arc::new(broker.clone());
        Plane::assemble(world, broker, bus, cfg, timeouts)
    }

    /// Agents publish through `agent_bus`; everything else uses the broker.
    pub fn assemble(
        world: World,
        broker: Arc<Broker>,
        agent_bus: Arc<dyn EventBus>,
        cfg: AgentConfig,
        timeouts: Timeouts,
    ) -> Plane {
        let bus: Arc<dyn EventBus> = Arc::new(broker.clone());
        let now = world.now();
        let mut agents: Vec<GatewayAgent> = world
            .gateways()
            .map(|g| {
                GatewayAgent::new(Some(g.urn.clone()), world.manifest(&g.urn), agent_bus.clone(), cfg.clone(), now)
                    .unwrap()
            })
            .collect();
        agents.push(GatewayAgent::new(None, Default::default(), agent_bus.clone(), cfg, now).unwrap());
        Plane {
            portal: PortalManager::new(ResourceDirectory::new(), bus.clone(), timeouts).unwrap(),
            exp: ExperimentConfigurator::new(bus.clone()).unwrap(),
            svc: ServiceConfigurator::new(bus).unwrap(),
            runtime: ExperimentRuntime::new([("alice".to_string(), "pw".to_string())], MotapConfig::default()),
            store: ObservationStore::new(),
            agents,
            broker,
            world,
            rejected_obs: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.world.now()
    }

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

    fn agent_for(&mut self, gw: Option<&Urn>) -> &mut GatewayAgent {
        self.agents.iter_mut().find(|a| a.gateway() == gw).unwrap()
    }

    pub fn step(&mut self) {
        let events = self.world.step(Duration::from_secs(1));
        let now = self.now();
        for ev in events {
            let (gw, source, obs) = match ev {
                SimEvent::ServiceFrame(f) => (Some(f.gateway), f.source, f.observations),
                SimEvent::GprsUplink(u) => (None, u.source, u.observations),
                _ => continue,
            };
            let idx = self.agents.iter().position(|a| a.gateway() == gw.as_ref()).unwrap();
            let fwd = self.agents[idx].on_frame(&mut self.world, &source, obs, now);
            for o in fwd {
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
    }

    pub fn run_for(&mut self, d: Duration) {
        let end = self.now() + d;
        while self.now() < end {
            self.step();
        }
    }

    pub fn run_until(&mut self, limit: Duration, mut done: impl FnMut(&Plane) -> bool) -> bool {
        let end = self.now() + limit;
        while self.now() < end {
            if done(self) {
                return true;
            }
            self.step();
        }
        done(self)
    }

    pub fn state(&self, id: &str) -> Option<NodeState> {
        self.portal.rd().get(&urn(id)).map(|d| d.state)
    }

    pub fn registered(&self) -> usize {
        self.portal.rd().count(&Query::all())
    }

    pub fn all_registered(&self) -> bool {
        self.registered() == self.world.nodes().count() + self.world.gateways().count()
    }

    /// RD-side view of what should be reservable.
    pub fn expected_available(&self) -> Vec<Urn> {
        self.portal
            .rd()
            .lookup(&Query::all().with(Predicate::Role(NodeRole::ExperimentationIoT)))
            .into_iter()
            .map(|d| d.urn)
            .collect()
    }

    pub fn available(&self) -> Vec<Urn> {
        self.runtime.available_nodes().map(|n| n.urn.clone()).collect()
    }

    pub fn events(&self, ty: &str) -> Vec<ManagementEvent> {
        self.broker
            .audit_log()
            .into_iter()
            .filter(|e| e.event.event_type == ty)
            .map(|e| e.event)
            .collect()
    }

    /// Types of every logged event naming `id`, in publish order.
    pub fn trail(&self, id: &str) -> Vec<String> {
        let u = urn(id).to_string();
        self.broker
            .audit_log()
            .into_iter()
            .filter(|e| e.event.payload.str(tags::URN) == Some(u.as_str()))
            .map(|e| e.event.event_type)
            .collect()
    }
}
