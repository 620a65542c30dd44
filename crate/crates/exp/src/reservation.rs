use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use citytb_core::{NodeRole, SimTime, Urn};
use rand::RngCore;
use serde::Serialize;

use crate::error::ExpError;

/// Reservations start and end on whole simulated seconds.
pub const GRANULARITY_MS: u64 = 1000;

/// 32 random bytes identifying a reservation's owner. Rendered as hex;
/// `Debug` never shows the value.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn generate() -> Self {
        let mut b = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut b);
        SecretKey(b)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let v = hex::decode(s).ok()?;
        Some(SecretKey(v.try_into().ok()?))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl From<[u8; 32]> for SecretKey {
    fn from(b: [u8; 32]) -> Self {
        SecretKey(b)
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Active,
    Finished,
    Cancelled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub id: u64,
    pub owner: String,
    pub urns: BTreeSet<Urn>,
    pub start: SimTime,
    pub end: SimTime,
    pub key: SecretKey,
    pub cancelled: bool,
}

impl Reservation {
    pub fn status(&self, now: SimTime) -> Status {
        if self.cancelled {
            Status::Cancelled
        } else if now < self.start {
            Status::Pending
        } else if now < self.end {
            Status::Active
        } else {
            Status::Finished
        }
    }

    pub fn overlaps(&self, start: SimTime, end: SimTime) -> bool {
        self.start < end && start < self.end
    }
}

/// A busy slot on one node's calendar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Busy {
    pub start: SimTime,
    pub end: SimTime,
    pub reservation: u64,
}

/// Reservation calendar. Per node it keeps non-overlapping busy slots keyed
/// by start time, so a conflict check is one range probe per URN.
#[derive(Debug, Default)]
pub struct Calendar {
    users: BTreeMap<String, String>,
    reservations: BTreeMap<u64, Reservation>,
    by_key: HashMap<SecretKey, u64>,
    slots: HashMap<Urn, BTreeMap<SimTime, Busy>>,
    next_id: u64,
}

impl Calendar {
    pub fn new(users: impl IntoIterator<Item = (String, String)>) -> Self {
        Calendar {
            users: users.into_iter().collect(),
            next_id: 1,
            ..Calendar::default()
        }
    }

    pub fn authenticate(&self, user: &str, credential: &str) -> Result<(), ExpError> {
        match self.users.get(user) {
            Some(c) if c == credential => Ok(()),
            _ => Err(ExpError::Unauthorized),
        }
    }

    fn slot_conflict(&self, urn: &Urn, start: SimTime, end: SimTime) -> bool {
        let Some(cal) = self.slots.get(urn) else {
            return false;
        };
        // The latest slot starting before `end` is the only one that can
        // overlap, since slots never overlap each other.
        cal.range(..end)
            .next_back()
            .is_some_and(|(_, b)| b.end > start)
    }

    /// Reserves `urns` over `[start, end)`.
    ///
    /// `role_of` reports the registered role of a URN, and `available` whether
    /// it is currently in the experiment node set.
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
        available: impl Fn(&Urn) -> bool,
    ) -> Result<&Reservation, ExpError> {
        self.authenticate(user, credential)?;
        if urns.is_empty() {
            return Err(ExpError::BadRequest("empty node set".into()));
        }
        if start >= end {
            return Err(ExpError::BadInterval("start must precede end".into()));
        }
        if start < now {
            return Err(ExpError::BadInterval("start is in the past".into()));
        }
        if start.0 % GRANULARITY_MS != 0 || end.0 % GRANULARITY_MS != 0 {
            return Err(ExpError::BadInterval("bounds must be whole seconds".into()));
        }
        let unknown: Vec<Urn> = urns.iter().filter(|u| role_of(u).is_none()).cloned().collect();
        if !unknown.is_empty() {
            return Err(ExpError::UnknownUrn(unknown));
        }
        let refused: Vec<Urn> = urns
            .iter()
            .filter(|u| !role_of(u).is_some_and(|r| r.is_reservable()) || !available(u))
            .cloned()
            .collect();
        if !refused.is_empty() {
            return Err(ExpError::NotReservable(refused));
        }
        let clash: Vec<Urn> = urns
            .iter()
            .filter(|u| self.slot_conflict(u, start, end))
            .cloned()
            .collect();
        if !clash.is_empty() {
            return Err(ExpError::Conflict {
                urns: clash,
                start,
                end,
            });
        }
        let id = self.next_id;
        self.next_id += 1;
        let key = SecretKey::generate();
        for u in urns {
            self.slots.entry(u.clone()).or_default().insert(
                start,
                Busy {
                    start,
                    end,
                    reservation: id,
                },
            );
        }
        self.by_key.insert(key, id);
        tracing::info!(id, owner = user, nodes = urns.len(), %start, %end, "reservation stored");
        Ok(self.reservations.entry(id).or_insert(Reservation {
            id,
            owner: user.to_string(),
            urns: urns.clone(),
            start,
            end,
            key,
            cancelled: false,
        }))
    }

    /// Cancels a reservation and frees its slots. Extending is not offered.
    pub fn cancel(&mut self, user: &str, credential: &str, id: u64) -> Result<(), ExpError> {
        self.authenticate(user, credential)?;
        let r = self
            .reservations
            .get_mut(&id)
            .ok_or(ExpError::UnknownReservation(id))?;
        if r.owner != user {
            return Err(ExpError::NotOwner);
        }
        if r.cancelled {
            return Ok(());
        }
        r.cancelled = true;
        for u in &r.urns {
            if let Some(cal) = self.slots.get_mut(u) {
                cal.remove(&r.start);
            }
        }
        Ok(())
    }

    pub fn by_key(&self, key: &SecretKey) -> Option<&Reservation> {
        self.by_key.get(key).and_then(|id| self.reservations.get(id))
    }

    pub fn get(&self, id: u64) -> Option<&Reservation> {
        self.reservations.get(&id)
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.reservations.values()
    }

    /// Busy slots of `urn` overlapping `[from, to)`.
    pub fn busy(&self, urn: &Urn, from: SimTime, to: SimTime) -> Vec<Busy> {
        let Some(cal) = self.slots.get(urn) else {
            return Vec::new();
        };
        let first = cal
            .range(..from)
            .next_back()
            .filter(|(_, b)| b.end > from)
            .map(|(_, b)| *b);
        first
            .into_iter()
            .chain(cal.range(from..to).map(|(_, b)| *b))
            .collect()
    }

    /// The reservation holding `urn` at `at`, if any.
    pub fn holder(&self, urn: &Urn, at: SimTime) -> Option<u64> {
        self.busy(urn, at, SimTime(at.0 + 1)).first().map(|b| b.reservation)
    }
}
