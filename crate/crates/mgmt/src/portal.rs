use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use citytb_bus::registry::{
    ADD_GW_REQ, ADD_PS_REQ, ADD_SENSOR_REQ, ADD_SERVICE_REQ, GW_REG_REQUEST, HELLO,
    NODE_INVALIDATION_REQUEST, NODE_REG_REQUEST, NODE_STATUS_REQUEST, PS_REG_REQUEST,
    REMOVE_GW_REQ, REMOVE_PS_REQ, REMOVE_SENSOR_REQ, REMOVE_SERVICE_REQ,
};
use citytb_bus::{
    tags, BusError, Channel, CorrelationId, Dedup, EventBus, EventStream, Kind, ManagementEvent,
    Payload, Topic,
};
use citytb_core::{
    NodeRole, NodeState, ResourceDescription, SimTime, Urn, META_BATTERY, META_CPU_LOAD,
    META_FREE_MEMORY,
};
use citytb_rd::{Predicate, Query, ResourceDirectory, Update};

use crate::config::Timeouts;

/// Why a registration was refused. The display form is the reply's cause.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RegistrationFailure {
    GatewayDisabled(Urn),
    UnknownGateway(Urn),
    ValidationError(String),
    ConfiguratorTimeout(String),
    ConfiguratorRejected(String),
    /// Another request for the same URN is still being processed.
    InProgress,
}

impl fmt::Display for RegistrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegistrationFailure::GatewayDisabled(g) => write!(f, "GatewayDisabled: {g}"),
            RegistrationFailure::UnknownGateway(g) => write!(f, "UnknownGateway: {g}"),
            RegistrationFailure::ValidationError(m) => write!(f, "ValidationError: {m}"),
            RegistrationFailure::ConfiguratorTimeout(c) => write!(f, "ConfiguratorTimeout: {c}"),
            RegistrationFailure::ConfiguratorRejected(m) => write!(f, "ConfiguratorRejected: {m}"),
            RegistrationFailure::InProgress => f.write_str("InProgress"),
        }
    }
}

/// One resource state transition. `None` means absent from the directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditLine {
    pub at: SimTime,
    pub urn: Urn,
    pub from: Option<NodeState>,
    pub to: Option<NodeState>,
    pub reason: String,
}

impl fmt::Display for AuditLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |s: Option<NodeState>| s.map(|s| s.as_str()).unwrap_or("absent");
        write!(
            f,
            "{} {} {} -> {} ({})",
            self.at.as_millis(),
            self.urn,
            name(self.from),
            name(self.to),
            self.reason
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Timer {
    invalidate_at: SimTime,
    delete_at: SimTime,
}

struct Workflow {
    request: ManagementEvent,
    desc: ResourceDescription,
    remaining: VecDeque<&'static str>,
    done: Vec<&'static str>,
    waiting: Option<(CorrelationId, &'static str, SimTime)>,
    prior: Option<ResourceDescription>,
}

/// Configurator commands that bring a resource into (or out of) the
/// experiment and service planes, in the order they are issued.
fn legs(desc: &ResourceDescription, add: bool) -> Vec<&'static str> {
    let pick = |a, r| if add { a } else { r };
    if desc.is_gateway() {
        return vec![pick(ADD_GW_REQ, REMOVE_GW_REQ)];
    }
    let mut out = Vec::new();
    match desc.role {
        NodeRole::ParticipatorySensing => out.push(pick(ADD_PS_REQ, REMOVE_PS_REQ)),
        NodeRole::ExperimentationIoT => {
            out.push(pick(ADD_SENSOR_REQ, REMOVE_SENSOR_REQ));
            if desc.feeds_services() {
                out.push(pick(ADD_SERVICE_REQ, REMOVE_SERVICE_REQ));
            }
        }
        NodeRole::ServiceOnlyIoT => out.push(pick(ADD_SERVICE_REQ, REMOVE_SERVICE_REQ)),
        NodeRole::Infrastructural => {}
    }
    out
}

fn undo(leg: &str) -> &'static str {
    match leg {
        ADD_GW_REQ => REMOVE_GW_REQ,
        ADD_PS_REQ => REMOVE_PS_REQ,
        ADD_SENSOR_REQ => REMOVE_SENSOR_REQ,
        _ => REMOVE_SERVICE_REQ,
    }
}

/// The portal's resource manager. Owns the resource directory; every
/// state change to it goes through here.
pub struct PortalManager {
    rd: ResourceDirectory,
    bus: Arc<dyn EventBus>,
    registrations: Box<dyn EventStream>,
    monitoring: Box<dyn EventStream>,
    reconf_replies: Box<dyn EventStream>,
    dedup: Dedup,
    timeouts: Timeouts,
    timers: BTreeMap<Urn, Timer>,
    workflows: BTreeMap<Urn, Workflow>,
    waiting: HashMap<CorrelationId, Urn>,
    audit: Vec<AuditLine>,
    seq: u64,
}

pub const SUBSCRIBER: &str = "portal";

impl PortalManager {
    pub fn new(
        rd: ResourceDirectory,
        bus: Arc<dyn EventBus>,
        timeouts: Timeouts,
    ) -> Result<PortalManager, BusError> {
        let sub = |channel, kind| bus.subscribe(SUBSCRIBER, Topic::new(channel, kind), true, None);
        Ok(PortalManager {
            registrations: sub(Channel::Registration, Kind::Request)?,
            monitoring: sub(Channel::Monitoring, Kind::Request)?,
            reconf_replies: sub(Channel::Reconfiguration, Kind::Reply)?,
            rd,
            bus,
            dedup: Dedup::new(),
            timeouts,
            timers: BTreeMap::new(),
            workflows: BTreeMap::new(),
            waiting: HashMap::new(),
            audit: Vec::new(),
            seq: 0,
        })
    }

    pub fn rd(&self) -> &ResourceDirectory {
        &self.rd
    }

    /// Direct access for read-mostly callers (standing queries, tests).
    pub fn rd_mut(&mut self) -> &mut ResourceDirectory {
        &mut self.rd
    }

    pub fn audit(&self) -> &[AuditLine] {
        &self.audit
    }

    pub fn timeouts(&self) -> Timeouts {
        self.timeouts
    }

    pub fn set_timeouts(&mut self, t: Timeouts) {
        self.timeouts = t;
    }

    /// Registrations still waiting on a configurator.
    pub fn pending(&self) -> usize {
        self.workflows.len()
    }

    /// Soft-state deadlines of a resource: (invalidation, deletion).
    pub fn deadlines(&self, urn: &Urn) -> Option<(SimTime, SimTime)> {
        self.timers.get(urn).map(|t| (t.invalidate_at, t.delete_at))
    }

    fn publish(&self, ev: &ManagementEvent) {
        if let Err(e) = self.bus.publish_event(ev) {
            tracing::error!(event = %ev.event_type, "portal publish failed: {e}");
        }
    }

    fn reply(&self, request: &ManagementEvent, now: SimTime, payload: Payload) {
        match request.reply(now, payload) {
            Some(r) => self.publish(&r),
            None => tracing::error!(event = %request.event_type, "no reply type"),
        }
    }

    fn outcome(urn: &str, result: Result<(), String>) -> Payload {
        let (ok, cause) = match result {
            Ok(()) => (true, String::new()),
            Err(c) => (false, c),
        };
        Payload::new()
            .with_str(tags::URN, urn)
            .with_bool(tags::OK, ok)
            .with_str(tags::CAUSE, cause)
    }

    fn transition(&mut self, at: SimTime, urn: &Urn, from: Option<NodeState>, to: Option<NodeState>, reason: &str) {
        let line = AuditLine {
            at,
            urn: urn.clone(),
            from,
            to,
            reason: reason.to_string(),
        };
        tracing::info!("{line}");
        self.audit.push(line);
    }

    fn touch(&mut self, urn: &Urn, at: SimTime) {
        self.timers.insert(
            urn.clone(),
            Timer {
                invalidate_at: at + self.timeouts.invalidation(),
                delete_at: at + self.timeouts.deletion(),
            },
        );
    }

    fn command(&mut self, kind: &'static str, desc: &ResourceDescription, reason: &str, now: SimTime) -> CorrelationId {
        self.seq += 1;
        let id = CorrelationId::derive(SUBSCRIBER, self.seq);
        let payload = Payload::new()
            .with_str(tags::URN, desc.urn.to_string())
            .with_str(tags::ROLE, desc.role.as_str())
            .with_str(tags::DESCRIPTION, citytb_rd::doc::encode(desc))
            .with_str(tags::REASON, reason);
        self.publish(&ManagementEvent::new(kind, id, now, payload));
        id
    }

    /// Drains all three input streams. Returns how many events were handled.
    pub fn pump(&mut self, now: SimTime) -> usize {
        let mut n = 0;
        while let Ok(Some(d)) = self.registrations.try_recv() {
            self.handle_registration(&d.event, now);
            let _ = self.registrations.ack(d.position);
            n += 1;
        }
        while let Ok(Some(d)) = self.monitoring.try_recv() {
            self.handle_monitoring(&d.event, now);
            let _ = self.monitoring.ack(d.position);
            n += 1;
        }
        while let Ok(Some(d)) = self.reconf_replies.try_recv() {
            self.handle_reconf_reply(&d.event, now);
            let _ = self.reconf_replies.ack(d.position);
            n += 1;
        }
        n
    }

    pub fn handle_registration(&mut self, ev: &ManagementEvent, now: SimTime) {
        if !self.dedup.first_time(ev) {
            tracing::debug!(id = %ev.correlation_id, "duplicate registration request ignored");
            return;
        }
        let urn_text = ev.payload.str(tags::URN).unwrap_or("").to_string();
        match self.admit(ev, now) {
            Ok(None) => self.reply(ev, now, Self::outcome(&urn_text, Ok(()))),
            Ok(Some(urn)) => self.advance(&urn, now),
            Err(f) => {
                tracing::info!(urn = %urn_text, "registration refused: {f}");
                self.reply(ev, now, Self::outcome(&urn_text, Err(f.to_string())));
            }
        }
    }

    /// Checks and RD insert. `Ok(None)` means done with nothing left to
    /// configure; `Ok(Some(urn))` means a workflow was started.
    fn admit(&mut self, ev: &ManagementEvent, now: SimTime) -> Result<Option<Urn>, RegistrationFailure> {
        use RegistrationFailure::*;
        let text = ev
            .payload
            .str(tags::DESCRIPTION)
            .ok_or_else(|| ValidationError("missing description".into()))?;
        let mut desc = citytb_rd::doc::decode(text).map_err(|e| ValidationError(e.to_string()))?;
        desc.validate().map_err(|e| ValidationError(e.to_string()))?;
        if ev.payload.str(tags::URN) != Some(desc.urn.to_string().as_str()) {
            return Err(ValidationError("URN field does not match description".into()));
        }
        let kind_ok = match ev.event_type.as_str() {
            GW_REG_REQUEST => desc.is_gateway(),
            PS_REG_REQUEST => desc.role == NodeRole::ParticipatorySensing,
            NODE_REG_REQUEST => !desc.is_gateway() && desc.role != NodeRole::ParticipatorySensing,
            _ => false,
        };
        if !kind_ok {
            return Err(ValidationError(format!("{} cannot register a {} resource", ev.event_type, desc.role)));
        }
        if self.workflows.contains_key(&desc.urn) {
            return Err(InProgress);
        }
        if let Some(gw) = &desc.parent_gateway {
            match self.rd.get(gw).map(|g| g.state) {
                None | Some(NodeState::Deleted) => return Err(UnknownGateway(gw.clone())),
                Some(NodeState::Active) => {}
                Some(_) => return Err(GatewayDisabled(gw.clone())),
            }
        }
        let existing = self.rd.get(&desc.urn).cloned();
        if let Some(e) = &existing {
            if e.state == NodeState::Active && e.role == desc.role {
                // Already known and live: refresh, nothing to reconfigure.
                let mut up = Update::seen(now);
                up.hw_meta = desc.hw_meta.clone();
                self.rd
                    .update(&desc.urn, &up)
                    .map_err(|e| ValidationError(e.to_string()))?;
                self.touch(&desc.urn, now);
                return Ok(None);
            }
        }
        desc.state = NodeState::Active;
        let prior = existing.filter(|e| e.state != NodeState::Deleted);
        self.rd
            .register(desc.clone())
            .map_err(|e| ValidationError(e.to_string()))?;
        let urn = desc.urn.clone();
        self.transition(now, &urn, prior.as_ref().map(|p| p.state), Some(NodeState::Active), "registered");
        self.touch(&urn, now);
        let remaining: VecDeque<_> = legs(&desc, true).into();
        if remaining.is_empty() {
            return Ok(None);
        }
        self.workflows.insert(
            urn.clone(),
            Workflow {
                request: ev.clone(),
                desc,
                remaining,
                done: Vec::new(),
                waiting: None,
                prior,
            },
        );
        Ok(Some(urn))
    }

    /// Issues the next configurator command, or the final reply.
    fn advance(&mut self, urn: &Urn, now: SimTime) {
        let Some(wf) = self.workflows.get_mut(urn) else {
            return;
        };
        match wf.remaining.pop_front() {
            Some(leg) => {
                let desc = wf.desc.clone();
                let id = self.command(leg, &desc, "registration", now);
                let deadline = now + self.timeouts.configurator();
                self.workflows.get_mut(urn).unwrap().waiting = Some((id, leg, deadline));
                self.waiting.insert(id, urn.clone());
            }
            None => {
                let wf = self.workflows.remove(urn).unwrap();
                self.reply(&wf.request, now, Self::outcome(&urn.to_string(), Ok(())));
            }
        }
    }

    fn handle_reconf_reply(&mut self, ev: &ManagementEvent, now: SimTime) {
        let ok = ev.payload.bool(tags::OK).unwrap_or(false);
        let Some(urn) = self.waiting.remove(&ev.correlation_id) else {
            if !ok {
                tracing::warn!(
                    event = %ev.event_type,
                    urn = ev.payload.str(tags::URN).unwrap_or(""),
                    cause = ev.payload.str(tags::CAUSE).unwrap_or(""),
                    "configurator refused a command"
                );
            }
            return;
        };
        let Some(wf) = self.workflows.get_mut(&urn) else {
            return;
        };
        let Some((_, leg, _)) = wf.waiting.take() else {
            return;
        };
        if ok {
            wf.done.push(leg);
            self.advance(&urn, now);
        } else {
            let cause = ev.payload.str(tags::CAUSE).unwrap_or("").to_string();
            self.roll_back(&urn, RegistrationFailure::ConfiguratorRejected(cause), now);
        }
    }

    /// Undoes a failed registration: configurators that already accepted
    /// the node are told to drop it and the directory returns to its prior
    /// content.
    fn roll_back(&mut self, urn: &Urn, failure: RegistrationFailure, now: SimTime) {
        let Some(wf) = self.workflows.remove(urn) else {
            return;
        };
        if let Some((id, _, _)) = wf.waiting {
            self.waiting.remove(&id);
        }
        for leg in wf.done.iter().rev() {
            self.command(undo(leg), &wf.desc, "rollback", now);
        }
        let restored = match &wf.prior {
            Some(p) => self.rd.register(p.clone()).map(|_| ()),
            None => self.rd.purge(urn),
        };
        if let Err(e) = restored {
            tracing::error!(%urn, "rollback of directory entry failed: {e}");
        }
        match &wf.prior {
            Some(p) => self.touch(urn, p.last_seen),
            None => {
                self.timers.remove(urn);
            }
        }
        self.transition(now, urn, Some(NodeState::Active), wf.prior.as_ref().map(|p| p.state), &failure.to_string());
        self.reply(&wf.request, now, Self::outcome(&urn.to_string(), Err(failure.to_string())));
    }

    pub fn handle_monitoring(&mut self, ev: &ManagementEvent, now: SimTime) {
        match ev.event_type.as_str() {
            HELLO => {
                let gw_text = ev.payload.str(tags::GATEWAY).unwrap_or("").to_string();
                let result = self.hello(&gw_text, now);
                let payload = Payload::new()
                    .with_str(tags::GATEWAY, gw_text)
                    .with_bool(tags::OK, result.is_ok())
                    .with_str(tags::CAUSE, result.err().unwrap_or_default());
                self.reply(ev, now, payload);
            }
            NODE_STATUS_REQUEST => {
                let urn = ev.payload.str(tags::URN).unwrap_or("").to_string();
                let result = self.status(ev, now);
                self.reply(ev, now, Self::outcome(&urn, result));
            }
            NODE_INVALIDATION_REQUEST => {
                let urn = ev.payload.str(tags::URN).unwrap_or("").to_string();
                let reason = ev.payload.str(tags::REASON).unwrap_or("invalidated").to_string();
                let result = self.known(&urn).map(|u| {
                    self.disable(&u, now, &format!("invalidation: {reason}"));
                });
                self.reply(ev, now, Self::outcome(&urn, result));
            }
            other => tracing::warn!(event = other, "unexpected monitoring event"),
        }
    }

    /// Resolves a URN to a live (not Deleted) directory record.
    fn known(&self, text: &str) -> Result<Urn, String> {
        let urn = Urn::parse(text).map_err(|e| e.to_string())?;
        match self.rd.get(&urn) {
            Some(d) if d.state != NodeState::Deleted => Ok(urn),
            _ => {
                tracing::debug!(%urn, "monitoring event for unknown resource");
                Err(format!("UnknownUrn: {urn}"))
            }
        }
    }

    fn hello(&mut self, gw: &str, now: SimTime) -> Result<(), String> {
        let gw = self.known(gw)?;
        let state = self.rd.get(&gw).unwrap().state;
        self.evidence(&gw, now, Update::seen(now));
        if state == NodeState::Disabled {
            self.restore(&gw, now, "HELLO received");
        }
        Ok(())
    }

    fn status(&mut self, ev: &ManagementEvent, now: SimTime) -> Result<(), String> {
        let urn = self.known(ev.payload.str(tags::URN).unwrap_or(""))?;
        if ev.payload.bool(tags::ALIVE) != Some(true) {
            return Ok(());
        }
        let mut up = Update::seen(now);
        if let Some(b) = ev.payload.f64(tags::BATTERY) {
            up = up.meta(META_BATTERY, b);
        }
        if let Some(m) = ev.payload.u64(tags::FREE_MEMORY) {
            up = up.meta(META_FREE_MEMORY, m);
        }
        if let Some(c) = ev.payload.f64(tags::CPU_LOAD) {
            up = up.meta(META_CPU_LOAD, c);
        }
        let d = self.rd.get(&urn).unwrap();
        let state = d.state;
        let parent_ok = d
            .parent_gateway
            .as_ref()
            .is_none_or(|g| self.rd.get(g).map(|g| g.state) == Some(NodeState::Active));
        self.evidence(&urn, now, up);
        if state == NodeState::Disabled && parent_ok {
            self.restore(&urn, now, "status received");
        }
        Ok(())
    }

    fn evidence(&mut self, urn: &Urn, now: SimTime, up: Update) {
        if let Err(e) = self.rd.update(urn, &up) {
            tracing::warn!(%urn, "last-seen update failed: {e}");
        }
        self.touch(urn, now);
    }

    fn restore(&mut self, urn: &Urn, now: SimTime, reason: &str) {
        if self.rd.update(urn, &Update::state(NodeState::Active)).is_err() {
            return;
        }
        self.transition(now, urn, Some(NodeState::Disabled), Some(NodeState::Active), reason);
        let desc = self.rd.get(urn).unwrap().clone();
        for leg in legs(&desc, true) {
            self.command(leg, &desc, "restored", now);
        }
    }

    /// Disables an Active resource, tells the configurators, and for a
    /// gateway cascades to its cluster members.
    fn disable(&mut self, urn: &Urn, now: SimTime, reason: &str) {
        let Some(desc) = self.rd.get(urn).cloned() else {
            return;
        };
        if desc.state != NodeState::Active {
            return;
        }
        if let Err(e) = self.rd.update(urn, &Update::state(NodeState::Disabled)) {
            tracing::error!(%urn, "disable failed: {e}");
            return;
        }
        self.transition(now, urn, Some(NodeState::Active), Some(NodeState::Disabled), reason);
        for leg in legs(&desc, false) {
            self.command(leg, &desc, reason, now);
        }
        if desc.is_gateway() {
            let members = self.rd.lookup(&Query::all().with(Predicate::ParentGateway(urn.clone())));
            let why = format!("gateway {urn} disabled");
            for m in members {
                self.disable(&m.urn, now, &why);
            }
        }
    }

    /// Applies configurator and soft-state deadlines due at `now`.
    pub fn expire(&mut self, now: SimTime) {
        let late: Vec<Urn> = self
            .workflows
            .iter()
            .filter(|(_, wf)| matches!(wf.waiting, Some((_, _, deadline)) if deadline <= now))
            .map(|(u, _)| u.clone())
            .collect();
        for urn in late {
            let leg = self.workflows[&urn].waiting.map(|w| w.1).unwrap_or("");
            self.roll_back(&urn, RegistrationFailure::ConfiguratorTimeout(leg.to_string()), now);
        }
        let mut invalid = Vec::new();
        let mut gone = Vec::new();
        for (urn, t) in &self.timers {
            if self.workflows.contains_key(urn) {
                continue;
            }
            match self.rd.get(urn).map(|d| d.state) {
                Some(NodeState::Active) if t.invalidate_at <= now => invalid.push(urn.clone()),
                Some(NodeState::Disabled) if t.delete_at <= now => gone.push(urn.clone()),
                _ => {}
            }
        }
        let silent = format!("silent for {} s", self.timeouts.invalidation_ms / 1000);
        for urn in invalid {
            self.disable(&urn, now, &silent);
        }
        for urn in gone {
            if self.rd.delete(&urn).is_ok() {
                self.transition(now, &urn, Some(NodeState::Disabled), Some(NodeState::Deleted), "deletion timeout");
                self.timers.remove(&urn);
            }
        }
    }
}
