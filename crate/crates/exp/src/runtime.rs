use std::collections::{BTreeMap, BTreeSet, HashMap};

use citytb_core::{GeoPoint, NodeImage, NodeRole, SimTime, Urn};
use citytb_sim::{NodeOutput, World};
use serde::Serialize;

use crate::error::ExpError;
use crate::motap::{Mode, MotapConfig, MotapReport, MotapTransfer};
use crate::overlay::OverlayLink;
use crate::reservation::{Calendar, SecretKey};

/// Delivery attempts per downlink message before a node counts as
/// unreachable.
const OVERLAY_ATTEMPTS: usize = 3;

/// One entry of the experiment node-set document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvailableNode {
    pub urn: Urn,
    pub role: NodeRole,
    pub gateway: Option<Urn>,
    pub position: Option<GeoPoint>,
    pub phenomena: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Up,
    Status,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub at: SimTime,
    pub direction: Direction,
    pub urn: Option<Urn>,
    pub payload: Vec<u8>,
}

/// What the runtime pushes to an experimenter's controller.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControllerEvent {
    Output {
        at: SimTime,
        source: Urn,
        payload: Vec<u8>,
    },
    Status {
        at: SimTime,
        urn: Option<Urn>,
        message: String,
    },
}

#[derive(Debug)]
pub struct Session {
    pub id: u32,
    pub reservation: u64,
    pub urns: BTreeSet<Urn>,
    pub end: SimTime,
    pub controller_url: Option<String>,
    pub trace: Vec<TraceEntry>,
    pub closed: bool,
    pub last_flash: Option<MotapReport>,
    outbox: Vec<ControllerEvent>,
}

impl Session {
    pub fn endpoint(&self) -> String {
        format!("/sessions/{}", self.id)
    }

    fn status(&mut self, at: SimTime, urn: Option<&Urn>, message: String) {
        self.trace.push(TraceEntry {
            at,
            direction: Direction::Status,
            urn: urn.cloned(),
            payload: message.clone().into_bytes(),
        });
        self.outbox.push(ControllerEvent::Status {
            at,
            urn: urn.cloned(),
            message,
        });
    }

    fn output(&mut self, at: SimTime, source: Urn, payload: Vec<u8>) {
        self.trace.push(TraceEntry {
            at,
            direction: Direction::Up,
            urn: Some(source.clone()),
            payload: payload.clone(),
        });
        self.outbox.push(ControllerEvent::Output {
            at,
            source,
            payload,
        });
    }
}

pub struct ExperimentRuntime {
    pub calendar: Calendar,
    pub motap: MotapConfig,
    available: BTreeMap<Urn, AvailableNode>,
    sessions: BTreeMap<u32, Session>,
    by_reservation: HashMap<u64, u32>,
    links: BTreeMap<Urn, OverlayLink>,
    next_session: u32,
}

/// Physical link carrying a node's virtual connection: its gateway's, or
/// the vehicle's own GPRS link.
fn link_of(world: &World, urn: &Urn) -> Urn {
    world
        .node(urn)
        .and_then(|n| n.cluster.clone())
        .unwrap_or_else(|| urn.clone())
}

impl ExperimentRuntime {
    pub fn new(users: impl IntoIterator<Item = (String, String)>, motap: MotapConfig) -> Self {
        ExperimentRuntime {
            calendar: Calendar::new(users),
            motap,
            available: BTreeMap::new(),
            sessions: BTreeMap::new(),
            by_reservation: HashMap::new(),
            links: BTreeMap::new(),
            next_session: 1,
        }
    }

    pub fn add_available(&mut self, node: AvailableNode) {
        self.available.insert(node.urn.clone(), node);
    }

    /// Withdraws a node and tells every open session that holds it. The
    /// reservation itself stands; the node simply stops answering.
    pub fn withdraw(&mut self, urn: &Urn, now: SimTime, why: &str) -> bool {
        let removed = self.remove_available(urn);
        for s in self.sessions.values_mut() {
            if !s.closed && s.urns.contains(urn) {
                s.status(now, Some(urn), format!("node withdrawn: {why}"));
            }
        }
        removed
    }

    pub fn remove_available(&mut self, urn: &Urn) -> bool {
        self.available.remove(urn).is_some()
    }

    pub fn is_available(&self, urn: &Urn) -> bool {
        self.available.contains_key(urn)
    }

    pub fn available_nodes(&self) -> impl Iterator<Item = &AvailableNode> {
        self.available.values()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn reserve(
        &mut self,
        user: &str,
        credential: &str,
        urns: &BTreeSet<Urn>,
        start: SimTime,
        end: SimTime,
        now: SimTime,
        role_of: impl Fn(&Urn) -> Option<NodeRole>,
    ) -> Result<(u64, SecretKey), ExpError> {
        let available = &self.available;
        let r = self.calendar.reserve(
            user,
            credential,
            urns,
            start,
            end,
            now,
            role_of,
            |u| available.contains_key(u),
        )?;
        Ok((r.id, r.key))
    }

    pub fn cancel(&mut self, user: &str, credential: &str, id: u64, now: SimTime) -> Result<(), ExpError> {
        self.calendar.cancel(user, credential, id)?;
        if let Some(&sid) = self.by_reservation.get(&id) {
            self.close(sid, now, "reservation cancelled");
        }
        Ok(())
    }

    pub fn open_session(
        &mut self,
        key: &SecretKey,
        now: SimTime,
        controller_url: Option<String>,
        world: &World,
    ) -> Result<u32, ExpError> {
        let r = self.calendar.by_key(key).ok_or(ExpError::InvalidKey)?;
        if r.cancelled {
            return Err(ExpError::InvalidKey);
        }
        if now < r.start {
            return Err(ExpError::NotStartedYet(r.start));
        }
        if now >= r.end {
            return Err(ExpError::Expired);
        }
        if let Some(&sid) = self.by_reservation.get(&r.id) {
            let s = self.sessions.get_mut(&sid).expect("indexed session");
            if controller_url.is_some() {
                s.controller_url = controller_url;
            }
            return Ok(sid);
        }
        let id = self.next_session;
        self.next_session += 1;
        for u in &r.urns {
            self.links.entry(link_of(world, u)).or_default().attach(id, u.clone());
        }
        let mut s = Session {
            id,
            reservation: r.id,
            urns: r.urns.clone(),
            end: r.end,
            controller_url,
            trace: Vec::new(),
            closed: false,
            last_flash: None,
            outbox: Vec::new(),
        };
        s.status(now, None, format!("session open, {} virtual connections", s.urns.len()));
        self.by_reservation.insert(r.id, id);
        self.sessions.insert(id, s);
        tracing::info!(session = id, reservation = r.id, "session opened");
        Ok(id)
    }

    fn close(&mut self, id: u32, now: SimTime, why: &str) {
        let Some(s) = self.sessions.get_mut(&id) else { return };
        if s.closed {
            return;
        }
        s.closed = true;
        s.status(now, None, format!("session closed: {why}"));
        for link in self.links.values_mut() {
            for u in &s.urns {
                if link.owner(u) == Some(id) {
                    link.detach(u);
                }
            }
        }
    }

    /// Closes sessions whose reservation has ended.
    pub fn expire(&mut self, now: SimTime) {
        let due: Vec<u32> = self
            .sessions
            .values()
            .filter(|s| !s.closed && now >= s.end)
            .map(|s| s.id)
            .collect();
        for id in due {
            self.close(id, now, "reservation ended");
        }
    }

    fn live(&mut self, id: u32, now: SimTime) -> Result<&mut Session, ExpError> {
        self.expire(now);
        let s = self.sessions.get_mut(&id).ok_or(ExpError::UnknownSession(id))?;
        if s.closed {
            return Err(ExpError::Expired);
        }
        Ok(s)
    }

    pub fn session(&self, id: u32) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn link(&self, id: &Urn) -> Option<&OverlayLink> {
        self.links.get(id)
    }

    /// Takes the controller events queued since the last call.
    pub fn drain_controller(&mut self, id: u32) -> Vec<ControllerEvent> {
        self.sessions
            .get_mut(&id)
            .map(|s| std::mem::take(&mut s.outbox))
            .unwrap_or_default()
    }

    /// Carries node output up the overlay to the owning session. Output from
    /// nodes outside every session is dropped.
    pub fn route_outputs(&mut self, world: &World, outputs: Vec<NodeOutput>) {
        let now = world.now();
        for out in outputs {
            let link = self.links.entry(link_of(world, &out.source)).or_default();
            let Some(bytes) = link.mux_up(&out.source, &out.payload) else {
                tracing::trace!(source = %out.source, "output from unowned node dropped");
                continue;
            };
            match link.demux_up(&bytes) {
                Ok(f) => {
                    if let Some(s) = self.sessions.get_mut(&f.session) {
                        s.output(now, f.urn, f.payload);
                    }
                }
                Err(e) => tracing::error!("uplink demux: {e}"),
            }
        }
    }

    pub fn send(&mut self, id: u32, target: &Urn, payload: &[u8], world: &mut World) -> Result<(), ExpError> {
        let now = world.now();
        let s = self.live(id, now)?;
        if !s.urns.contains(target) {
            return Err(ExpError::NotInReservation(target.clone()));
        }
        s.trace.push(TraceEntry {
            at: now,
            direction: Direction::Down,
            urn: Some(target.clone()),
            payload: payload.to_vec(),
        });
        let link = self.links.entry(link_of(world, target)).or_default();
        let bytes = link.mux_down(id, target, payload);
        let frame = link.demux_down(&bytes)?;
        let mut last = None;
        for _ in 0..OVERLAY_ATTEMPTS {
            match world.deliver_experiment(&frame.urn, &frame.payload) {
                Ok(outputs) => {
                    self.route_outputs(world, outputs);
                    return Ok(());
                }
                Err(e) => last = Some(e),
            }
        }
        let why = last.map(|e| e.to_string()).unwrap_or_default();
        let s = self.sessions.get_mut(&id).expect("live session");
        s.status(now, Some(target), format!("frame dropped: {why}"));
        Err(ExpError::NodeUnreachable(target.clone()))
    }

    pub fn reset(&mut self, id: u32, target: &Urn, world: &mut World) -> Result<(), ExpError> {
        let now = world.now();
        let s = self.live(id, now)?;
        if !s.urns.contains(target) {
            return Err(ExpError::NotInReservation(target.clone()));
        }
        match world.reset(target) {
            Ok(out) => {
                s.status(now, Some(target), "reset".into());
                self.route_outputs(world, vec![out]);
                Ok(())
            }
            Err(e) => {
                s.status(now, Some(target), format!("reset failed: {e}"));
                Err(ExpError::NodeUnreachable(target.clone()))
            }
        }
    }

    /// Flashes reserved nodes. Broadcast ignores `targets` and takes every
    /// node of the reservation.
    pub fn flash(
        &mut self,
        id: u32,
        mode: Mode,
        targets: &[Urn],
        image: &NodeImage,
        world: &mut World,
    ) -> Result<MotapReport, ExpError> {
        let now = world.now();
        let cfg = self.motap;
        let s = self.live(id, now)?;
        let set: BTreeSet<Urn> = match mode {
            Mode::Broadcast => s.urns.clone(),
            Mode::Unicast if targets.len() != 1 => {
                return Err(ExpError::BadRequest("unicast takes exactly one target".into()))
            }
            _ => targets.iter().cloned().collect(),
        };
        if let Some(u) = set.iter().find(|u| !s.urns.contains(*u)) {
            return Err(ExpError::NotInReservation(u.clone()));
        }
        let transfer = MotapTransfer::new(world, image, &set, cfg)?;
        s.status(
            now,
            None,
            format!("flash {} ({} bytes) to {} nodes", image.image_id, image.size(), set.len()),
        );
        let report = transfer.run(world);
        for (u, round) in &report.completed {
            s.status(now, Some(u), format!("flash complete in round {round}"));
        }
        for u in &report.failed {
            s.status(now, Some(u), "flash failed".into());
        }
        s.last_flash = Some(report.clone());
        self.route_outputs(world, report.outputs.clone());
        if report.failed.is_empty() {
            Ok(report)
        } else {
            Err(ExpError::PartialFailure(report.failed.iter().cloned().collect()))
        }
    }
}
