use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use citytb_asi::ObservationStore;
use citytb_bus::registry::{
    ADD_GW_REQ, ADD_PS_REQ, ADD_SENSOR_REQ, ADD_SERVICE_REQ, REMOVE_GW_REQ, REMOVE_PS_REQ,
    REMOVE_SENSOR_REQ, REMOVE_SERVICE_REQ,
};
use citytb_bus::{
    tags, BusError, Channel, EventBus, EventStream, Filter, Kind, Payload, Topic,
};
use citytb_core::{NodeRole, ResourceDescription, SimTime, Urn};
use citytb_exp::{AvailableNode, ExperimentRuntime};

/// Fault hooks shared by both configurators, for exercising the
/// registration rollback paths.
#[derive(Debug, Default)]
struct Faults {
    reject: BTreeSet<Urn>,
    silent: bool,
}

struct Endpoint {
    name: &'static str,
    bus: Arc<dyn EventBus>,
    requests: Box<dyn EventStream>,
    faults: Faults,
}

impl Endpoint {
    fn new(name: &'static str, types: &[&str], bus: Arc<dyn EventBus>) -> Result<Endpoint, BusError> {
        let filter: Filter = types.iter().map(|t| t.to_string()).collect();
        let requests = bus.subscribe(
            name,
            Topic::new(Channel::Reconfiguration, Kind::Request),
            true,
            Some(filter),
        )?;
        Ok(Endpoint {
            name,
            bus,
            requests,
            faults: Faults::default(),
        })
    }

    /// Feeds each pending command to `apply` and publishes the outcome.
    fn pump(
        &mut self,
        now: SimTime,
        mut apply: impl FnMut(&str, &ResourceDescription) -> Result<(), String>,
    ) -> usize {
        let mut n = 0;
        while let Ok(Some(d)) = self.requests.try_recv() {
            n += 1;
            let ev = d.event;
            let _ = self.requests.ack(d.position);
            if self.faults.silent {
                continue;
            }
            let urn = ev.payload.str(tags::URN).unwrap_or("").to_string();
            let result = citytb_rd::doc::decode(ev.payload.str(tags::DESCRIPTION).unwrap_or(""))
                .map_err(|e| format!("bad description: {e}"))
                .and_then(|desc| {
                    if self.faults.reject.contains(&desc.urn) {
                        return Err(format!("{} rejects {}", self.name, desc.urn));
                    }
                    apply(&ev.event_type, &desc)
                });
            if let Err(cause) = &result {
                tracing::info!(configurator = self.name, %urn, event = %ev.event_type, "refused: {cause}");
            }
            let (ok, cause) = match result {
                Ok(()) => (true, String::new()),
                Err(c) => (false, c),
            };
            let payload = Payload::new()
                .with_str(tags::URN, urn)
                .with_bool(tags::OK, ok)
                .with_str(tags::CAUSE, cause);
            if let Some(reply) = ev.reply(now, payload) {
                if let Err(e) = self.bus.publish_event(&reply) {
                    tracing::error!(configurator = self.name, "reply publish failed: {e}");
                }
            }
        }
        n
    }
}

/// Keeps the experiment runtime's available-node set in line with the
/// directory. Gateways are tracked separately: they appear in the exported
/// node-set document but are never reservable.
pub struct ExperimentConfigurator {
    ep: Endpoint,
    gateways: BTreeMap<Urn, ResourceDescription>,
}

impl ExperimentConfigurator {
    pub const SUBSCRIBER: &'static str = "exp-configurator";

    pub fn new(bus: Arc<dyn EventBus>) -> Result<Self, BusError> {
        Ok(ExperimentConfigurator {
            ep: Endpoint::new(
                Self::SUBSCRIBER,
                &[ADD_SENSOR_REQ, REMOVE_SENSOR_REQ, ADD_GW_REQ, REMOVE_GW_REQ],
                bus,
            )?,
            gateways: BTreeMap::new(),
        })
    }

    /// Refuse every command about `urn` from now on.
    pub fn reject(&mut self, urn: Urn) {
        self.ep.faults.reject.insert(urn);
    }

    /// Swallow commands without replying.
    pub fn set_silent(&mut self, silent: bool) {
        self.ep.faults.silent = silent;
    }

    pub fn gateways(&self) -> impl Iterator<Item = &Urn> {
        self.gateways.keys()
    }

    pub fn pump(&mut self, runtime: &mut ExperimentRuntime, now: SimTime) -> usize {
        let gateways = &mut self.gateways;
        self.ep.pump(now, |kind, desc| match kind {
            ADD_SENSOR_REQ => {
                if desc.role != NodeRole::ExperimentationIoT {
                    return Err(format!("{} is not an experimentation node", desc.urn));
                }
                runtime.add_available(AvailableNode {
                    urn: desc.urn.clone(),
                    role: desc.role,
                    gateway: desc.parent_gateway.clone(),
                    position: desc.position.fixed(),
                    phenomena: desc.capabilities.iter().map(|c| c.phenomenon.clone()).collect(),
                });
                Ok(())
            }
            REMOVE_SENSOR_REQ => {
                if runtime.withdraw(&desc.urn, now, "disabled by resource manager") {
                    Ok(())
                } else {
                    Err(format!("unknown urn {}", desc.urn))
                }
            }
            ADD_GW_REQ => {
                gateways.insert(desc.urn.clone(), desc.clone());
                Ok(())
            }
            REMOVE_GW_REQ => gateways
                .remove(&desc.urn)
                .map(|_| ())
                .ok_or_else(|| format!("unknown urn {}", desc.urn)),
            other => Err(format!("unsupported command {other}")),
        })
    }
}

/// Opens and closes the service plane's ingest gate per source.
pub struct ServiceConfigurator {
    ep: Endpoint,
}

impl ServiceConfigurator {
    pub const SUBSCRIBER: &'static str = "svc-configurator";

    pub fn new(bus: Arc<dyn EventBus>) -> Result<Self, BusError> {
        Ok(ServiceConfigurator {
            ep: Endpoint::new(
                Self::SUBSCRIBER,
                &[ADD_SERVICE_REQ, REMOVE_SERVICE_REQ, ADD_PS_REQ, REMOVE_PS_REQ],
                bus,
            )?,
        })
    }

    pub fn reject(&mut self, urn: Urn) {
        self.ep.faults.reject.insert(urn);
    }

    pub fn set_silent(&mut self, silent: bool) {
        self.ep.faults.silent = silent;
    }

    pub fn pump(&mut self, store: &mut ObservationStore, now: SimTime) -> usize {
        self.ep.pump(now, |kind, desc| match kind {
            ADD_SERVICE_REQ | ADD_PS_REQ => {
                if desc.capabilities.is_empty() {
                    return Err(format!("{} declares no capabilities", desc.urn));
                }
                store.register_source(desc.urn.clone());
                Ok(())
            }
            REMOVE_SERVICE_REQ | REMOVE_PS_REQ => {
                if store.unregister_source(&desc.urn) {
                    Ok(())
                } else {
                    Err(format!("unknown urn {}", desc.urn))
                }
            }
            other => Err(format!("unsupported command {other}")),
        })
    }
}
