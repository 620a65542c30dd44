//! Operations shared by the HTTP endpoints and the scenario runner.

use std::collections::BTreeSet;
use std::time::Duration;

use citytb_bus::registry::*;
use citytb_bus::tags;
use citytb_core::{NodeImage, NodeRole, NodeState, SimTime, Urn};
use citytb_exp::{AvailableNode, ExpError, Mode, MotapReport, SecretKey};
use citytb_sim::FaultKind;
use serde::{Deserialize, Serialize};

use crate::bed::{parse_instant, Testbed};
use crate::error::TestbedError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Granted {
    pub id: u64,
    pub key: String,
    pub start: SimTime,
    pub end: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub start: SimTime,
    pub end: SimTime,
    pub reservation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAvailability {
    pub urn: Urn,
    pub busy: Vec<Slot>,
}

/// Exported node-set document: what an experimenter can reserve, plus the
/// gateways that carry it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSet {
    pub testbed: String,
    pub generated_at: SimTime,
    pub gateways: Vec<Urn>,
    pub nodes: Vec<AvailableNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlashOutcome {
    pub chunks: usize,
    pub rounds: u32,
    pub data_frames: u64,
    pub ack_frames: u64,
    pub completed: Vec<(Urn, u32)>,
    pub failed: Vec<Urn>,
}

impl From<&MotapReport> for FlashOutcome {
    fn from(r: &MotapReport) -> Self {
        FlashOutcome {
            chunks: r.chunks,
            rounds: r.rounds,
            data_frames: r.data_frames,
            ack_frames: r.ack_frames,
            completed: r.completed.iter().map(|(u, n)| (u.clone(), *n)).collect(),
            failed: r.failed.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub state: NodeState,
    pub role: NodeRole,
    pub count: usize,
}

pub fn parse_fault(kind: &str, loss: Option<f64>) -> Result<FaultKind, TestbedError> {
    match kind {
        "node-death" => Ok(FaultKind::NodeDeath),
        "gw-death" => Ok(FaultKind::GatewayDeath),
        "revive" => Ok(FaultKind::Revive),
        "link-degrade" => {
            let p = loss.ok_or_else(|| TestbedError::BadRequest("link-degrade needs a loss".into()))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(TestbedError::BadRequest(format!("loss {p} outside [0, 1]")));
            }
            Ok(FaultKind::LinkDegrade(p))
        }
        other => Err(TestbedError::BadRequest(format!("unknown fault {other:?}"))),
    }
}

pub fn parse_mode(text: &str) -> Result<Mode, TestbedError> {
    match text {
        "unicast" => Ok(Mode::Unicast),
        "multicast" => Ok(Mode::Multicast),
        "broadcast" => Ok(Mode::Broadcast),
        other => Err(TestbedError::BadRequest(format!("unknown flash mode {other:?}"))),
    }
}

impl Testbed {
    pub fn resolve_all<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<Urn>, TestbedError> {
        ids.iter().map(|s| self.resolve(s.as_ref())).collect()
    }

    pub fn inject_fault(&mut self, target: &str, kind: FaultKind) -> Result<(), TestbedError> {
        let urn = self.resolve(target)?;
        let now = self.now();
        self.world
            .inject_fault(&urn, kind, now)
            .map_err(|e| TestbedError::NotFound(e.to_string()))?;
        tracing::info!(%urn, %kind, "fault injected");
        Ok(())
    }

    pub fn reserve(
        &mut self,
        user: &str,
        credential: &str,
        ids: &[String],
        from: &str,
        dur: Duration,
    ) -> Result<Granted, TestbedError> {
        let urns: BTreeSet<Urn> = self.resolve_all(ids)?.into_iter().collect();
        let now = self.now();
        let start = parse_instant(from, now)?;
        let end = start + dur;
        let rd = self.portal.rd();
        let (id, key) = self
            .runtime
            .reserve(user, credential, &urns, start, end, now, |u| rd.get(u).map(|d| d.role))?;
        Ok(Granted {
            id,
            key: key.to_hex(),
            start,
            end,
        })
    }

    pub fn cancel(&mut self, user: &str, credential: &str, id: u64) -> Result<(), TestbedError> {
        let now = self.now();
        Ok(self.runtime.cancel(user, credential, id, now)?)
    }

    pub fn open_session(&mut self, key: &str, controller_url: Option<String>) -> Result<u32, TestbedError> {
        let key = SecretKey::from_hex(key).ok_or(ExpError::InvalidKey)?;
        let now = self.now();
        Ok(self.runtime.open_session(&key, now, controller_url, &self.world)?)
    }

    /// Session-scoped calls carry the reservation key; it must be the key of
    /// the reservation the session was opened for.
    pub fn authorize(&self, session: u32, key: &str) -> Result<(), TestbedError> {
        let s = self.runtime.session(session).ok_or(ExpError::UnknownSession(session))?;
        let key = SecretKey::from_hex(key).ok_or(ExpError::InvalidKey)?;
        match self.runtime.calendar.by_key(&key) {
            Some(r) if r.id == s.reservation => Ok(()),
            _ => Err(ExpError::InvalidKey.into()),
        }
    }

    pub fn send(&mut self, session: u32, target: &str, payload: &[u8]) -> Result<(), TestbedError> {
        let urn = self.resolve(target)?;
        Ok(self.runtime.send(session, &urn, payload, &mut self.world)?)
    }

    pub fn reset(&mut self, session: u32, target: &str) -> Result<(), TestbedError> {
        let urn = self.resolve(target)?;
        Ok(self.runtime.reset(session, &urn, &mut self.world)?)
    }

    pub fn flash(
        &mut self,
        session: u32,
        mode: Mode,
        targets: &[String],
        image: &NodeImage,
    ) -> Result<FlashOutcome, TestbedError> {
        let targets = self.resolve_all(targets)?;
        let report = self.runtime.flash(session, mode, &targets, image, &mut self.world);
        match report {
            Ok(r) => Ok(FlashOutcome::from(&r)),
            Err(e) => Err(e.into()),
        }
    }

    pub fn availability(&self, from: SimTime, to: SimTime) -> Vec<NodeAvailability> {
        self.runtime
            .available_nodes()
            .map(|n| NodeAvailability {
                urn: n.urn.clone(),
                busy: self
                    .runtime
                    .calendar
                    .busy(&n.urn, from, to)
                    .into_iter()
                    .map(|b| Slot {
                        start: b.start,
                        end: b.end,
                        reservation: b.reservation,
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn node_set(&self) -> NodeSet {
        NodeSet {
            testbed: format!("{}:{}", self.world.authority(), self.world.testbed()),
            generated_at: self.now(),
            gateways: self.exp.gateways().cloned().collect(),
            nodes: self.runtime.available_nodes().cloned().collect(),
        }
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        self.portal
            .rd()
            .summary()
            .into_iter()
            .map(|((state, role), count)| SummaryRow { state, role, count })
            .collect()
    }

    /// Reconfiguration sequence a device's cold-start registration must
    /// produce, derived from the simulator's ground truth rather than from
    /// the directory record.
    pub fn expected_trail(&self, urn: &Urn) -> Option<Vec<&'static str>> {
        if self.world.gateway(urn).is_some() {
            return Some(vec![GW_REG_REQUEST, ADD_GW_REQ, ADD_GW_REP, GW_REG_REPLY]);
        }
        let node = self.world.node(urn)?;
        let mut t = vec![NODE_REG_REQUEST];
        match node.role {
            NodeRole::ExperimentationIoT => {
                t.extend([ADD_SENSOR_REQ, ADD_SENSOR_REP]);
                if node.feeds_services {
                    t.extend([ADD_SERVICE_REQ, ADD_SERVICE_REP]);
                }
            }
            NodeRole::ServiceOnlyIoT => t.extend([ADD_SERVICE_REQ, ADD_SERVICE_REP]),
            NodeRole::ParticipatorySensing => {
                t = vec![PS_REG_REQUEST, ADD_PS_REQ, ADD_PS_REP, PS_REG_REPLY];
                return Some(t);
            }
            NodeRole::Infrastructural => {}
        }
        t.push(NODE_REG_REPLY);
        Some(t)
    }

    /// Event types naming each device, in bus publish order.
    pub fn trails(&self) -> std::collections::BTreeMap<Urn, Vec<String>> {
        let mut out: std::collections::BTreeMap<Urn, Vec<String>> = Default::default();
        for e in self.broker.audit_log() {
            // HELLOs carry only GATEWAY and are not part of any trail.
            if let Some(u) = e.event.payload.str(tags::URN).and_then(|s| Urn::parse(s).ok()) {
                out.entry(u).or_default().push(e.event.event_type.clone());
            }
        }
        out
    }

    /// Devices whose trail does not start with the expected cold-start
    /// sequence, with what was seen instead.
    pub fn misordered(&self) -> Vec<(Urn, Vec<String>)> {
        let trails = self.trails();
        let devices = self
            .world
            .gateways()
            .map(|g| g.urn.clone())
            .chain(self.world.nodes().map(|n| n.urn.clone()));
        let mut bad = Vec::new();
        for urn in devices {
            let want = self.expected_trail(&urn).unwrap_or_default();
            let got = trails.get(&urn).cloned().unwrap_or_default();
            if got.len() < want.len() || got[..want.len()] != want[..] {
                bad.push((urn, got));
            }
        }
        bad
    }
}
