use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::mpsc::Sender;

use citytb_core::{GeoPoint, NodeRole, NodeState, ResourceDescription, Urn};

use crate::doc::{self, Update};
use crate::error::RdError;
use crate::query::{Predicate, Query, StateFilter};

/// Grid cell edge used by the geo index, in degrees.
const CELL_DEG: f64 = 0.01;
const METERS_PER_DEG: f64 = 111_194.9;

pub fn resource_uri(urn: &Urn) -> String {
    format!("/resources/{urn}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Change {
    Appeared,
    Disappeared,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub subscription: u64,
    pub change: Change,
    pub urn: Urn,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registered {
    pub uri: String,
    /// False when an identical description was already stored.
    pub created: bool,
}

struct Standing {
    query: Query,
    matched: BTreeSet<Urn>,
    sink: Sender<Notification>,
}

fn cell(p: &GeoPoint) -> (i32, i32) {
    ((p.lat / CELL_DEG).floor() as i32, (p.lon / CELL_DEG).floor() as i32)
}

#[derive(Default)]
struct Indexes {
    role: HashMap<NodeRole, BTreeSet<Urn>>,
    phenomenon: HashMap<String, BTreeSet<Urn>>,
    state: HashMap<NodeState, BTreeSet<Urn>>,
    cell: HashMap<(i32, i32), BTreeSet<Urn>>,
}

impl Indexes {
    fn add(&mut self, d: &ResourceDescription) {
        self.role.entry(d.role).or_default().insert(d.urn.clone());
        for c in &d.capabilities {
            self.phenomenon
                .entry(c.phenomenon.clone())
                .or_default()
                .insert(d.urn.clone());
        }
        self.state.entry(d.state).or_default().insert(d.urn.clone());
        if let Some(p) = d.position.fixed() {
            self.cell.entry(cell(&p)).or_default().insert(d.urn.clone());
        }
    }

    fn remove(&mut self, d: &ResourceDescription) {
        fn drop_from<K: std::hash::Hash + Eq>(m: &mut HashMap<K, BTreeSet<Urn>>, k: &K, u: &Urn) {
            if let Some(set) = m.get_mut(k) {
                set.remove(u);
                if set.is_empty() {
                    m.remove(k);
                }
            }
        }
        drop_from(&mut self.role, &d.role, &d.urn);
        for c in &d.capabilities {
            drop_from(&mut self.phenomenon, &c.phenomenon, &d.urn);
        }
        drop_from(&mut self.state, &d.state, &d.urn);
        if let Some(p) = d.position.fixed() {
            drop_from(&mut self.cell, &cell(&p), &d.urn);
        }
    }
}

/// The resource directory. One writer; wrap in a lock to share.
pub struct ResourceDirectory {
    records: BTreeMap<Urn, ResourceDescription>,
    history: BTreeMap<Urn, Vec<ResourceDescription>>,
    idx: Indexes,
    subs: BTreeMap<u64, Standing>,
    next_sub: u64,
    log: Option<File>,
}

impl Default for ResourceDirectory {
    fn default() -> Self {
        Self::new()
    }
}

impl ResourceDirectory {
    pub fn new() -> Self {
        ResourceDirectory {
            records: BTreeMap::new(),
            history: BTreeMap::new(),
            idx: Indexes::default(),
            subs: BTreeMap::new(),
            next_sub: 1,
            log: None,
        }
    }

    /// Opens a store backed by an append-only log, replaying what is there.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RdError> {
        let path = path.as_ref();
        let mut rd = ResourceDirectory::new();
        if path.exists() {
            let mut lines = BufReader::new(File::open(path)?).lines();
            while let Some(line) = lines.next() {
                let line = line?;
                let mut words = line.splitn(2, ' ');
                match (words.next(), words.next()) {
                    (Some("put"), Some(n)) => {
                        let n: usize = n.parse().map_err(|_| RdError::Io(format!("bad record {line:?}")))?;
                        let mut text = String::new();
                        for _ in 0..n {
                            let Some(l) = lines.next() else {
                                tracing::warn!("ignoring torn record at end of store log");
                                break;
                            };
                            text.push_str(&l?);
                            text.push('\n');
                        }
                        if let Ok(d) = doc::decode(&text) {
                            rd.put_raw(d);
                        }
                    }
                    (Some("archive"), Some(u)) | (Some("purge"), Some(u)) => {
                        let urn = Urn::parse(u).map_err(|e| RdError::Io(e.to_string()))?;
                        if let Some(old) = rd.remove_raw(&urn) {
                            if line.starts_with("archive") {
                                rd.history.entry(urn).or_default().push(old);
                            }
                        }
                    }
                    _ if line.is_empty() => {}
                    _ => return Err(RdError::Io(format!("bad record {line:?}"))),
                }
            }
        }
        rd.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(rd)
    }

    fn write_log(&mut self, record: String) -> Result<(), RdError> {
        if let Some(f) = &mut self.log {
            f.write_all(record.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }

    fn log_put(&mut self, urn: &Urn) -> Result<(), RdError> {
        if self.log.is_none() {
            return Ok(());
        }
        let text = doc::encode(&self.records[urn]);
        let n = text.lines().count();
        self.write_log(format!("put {n}\n{text}"))
    }

    fn put_raw(&mut self, d: ResourceDescription) {
        if let Some(old) = self.records.remove(&d.urn) {
            self.idx.remove(&old);
        }
        self.idx.add(&d);
        self.records.insert(d.urn.clone(), d);
    }

    fn remove_raw(&mut self, urn: &Urn) -> Option<ResourceDescription> {
        let old = self.records.remove(urn)?;
        self.idx.remove(&old);
        Some(old)
    }

    fn notify(&mut self, urn: &Urn) {
        let current = self.records.get(urn);
        for (id, s) in self.subs.iter_mut() {
            let now = current.is_some_and(|d| s.query.matches(d));
            let before = s.matched.contains(urn);
            let change = match (before, now) {
                (false, true) => {
                    s.matched.insert(urn.clone());
                    Change::Appeared
                }
                (true, false) => {
                    s.matched.remove(urn);
                    Change::Disappeared
                }
                _ => continue,
            };
            let _ = s.sink.send(Notification {
                subscription: *id,
                change,
                urn: urn.clone(),
            });
        }
    }

    /// Publishes a description. Re-posting an identical description is a
    /// no-op; re-registering a Deleted resource starts a fresh record and
    /// archives the old one.
    pub fn register(&mut self, desc: ResourceDescription) -> Result<Registered, RdError> {
        desc.validate()?;
        let uri = resource_uri(&desc.urn);
        if let Some(existing) = self.records.get(&desc.urn) {
            if existing == &desc {
                return Ok(Registered {
                    uri,
                    created: false,
                });
            }
            if existing.state == NodeState::Deleted {
                let old = self.remove_raw(&desc.urn).unwrap();
                self.history.entry(desc.urn.clone()).or_default().push(old);
                self.write_log(format!("archive {}\n", desc.urn))?;
            } else if existing.role != desc.role {
                return Err(RdError::Conflict {
                    urn: desc.urn.clone(),
                    field: "role",
                });
            }
        }
        let urn = desc.urn.clone();
        self.put_raw(desc);
        self.log_put(&urn)?;
        self.notify(&urn);
        Ok(Registered { uri, created: true })
    }

    /// Merges mutable fields into an existing record.
    pub fn update(&mut self, urn: &Urn, update: &Update) -> Result<(), RdError> {
        let mut d = self
            .records
            .get(urn)
            .cloned()
            .ok_or_else(|| RdError::NotFound(urn.clone()))?;
        if let Some(s) = update.state {
            d.state = s;
        }
        if let Some(p) = update.position {
            d.position = p;
        }
        if let Some(t) = update.last_seen {
            d.last_seen = t.max(d.registered_at);
        }
        for (k, v) in &update.hw_meta {
            d.hw_meta.insert(k.clone(), v.clone());
        }
        d.validate()?;
        if self.records.get(urn) == Some(&d) {
            return Ok(());
        }
        self.put_raw(d);
        self.log_put(urn)?;
        self.notify(urn);
        Ok(())
    }

    /// Marks a resource Deleted; it stays visible to `state=deleted` lookups.
    pub fn delete(&mut self, urn: &Urn) -> Result<(), RdError> {
        self.update(urn, &Update::state(NodeState::Deleted))
    }

    /// Removes every trace of a resource (used to roll back a registration).
    pub fn purge(&mut self, urn: &Urn) -> Result<(), RdError> {
        self.remove_raw(urn)
            .ok_or_else(|| RdError::NotFound(urn.clone()))?;
        self.write_log(format!("purge {urn}\n"))?;
        self.notify(urn);
        Ok(())
    }

    pub fn get(&self, urn: &Urn) -> Option<&ResourceDescription> {
        self.records.get(urn)
    }

    /// Earlier lifetimes of a URN that was deleted and registered again.
    pub fn history(&self, urn: &Urn) -> &[ResourceDescription] {
        self.history.get(urn).map(Vec::as_slice).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Every stored record, URN ascending.
    pub fn scan(&self) -> impl Iterator<Item = &ResourceDescription> {
        self.records.values()
    }

    fn candidates(&self, q: &Query) -> Option<BTreeSet<Urn>> {
        let mut sets: Vec<BTreeSet<Urn>> = Vec::new();
        let empty = BTreeSet::new();
        for p in &q.predicates {
            match p {
                Predicate::Role(r) => sets.push(self.idx.role.get(r).unwrap_or(&empty).clone()),
                Predicate::Phenomenon(ph) => {
                    sets.push(self.idx.phenomenon.get(ph).unwrap_or(&empty).clone())
                }
                _ => {}
            }
        }
        match q.state {
            StateFilter::Active => sets.push(
                self.idx
                    .state
                    .get(&NodeState::Active)
                    .unwrap_or(&empty)
                    .clone(),
            ),
            StateFilter::Is(s) => sets.push(self.idx.state.get(&s).unwrap_or(&empty).clone()),
            StateFilter::Any => {}
        }
        if let Some(g) = &q.geo {
            let dlat = g.radius_m / METERS_PER_DEG;
            let coslat = g.center.lat.to_radians().cos().abs().max(1e-6);
            let dlon = (g.radius_m / (METERS_PER_DEG * coslat)).min(180.0);
            let lo = cell(&GeoPoint::new(g.center.lat - dlat, g.center.lon - dlon));
            let hi = cell(&GeoPoint::new(g.center.lat + dlat, g.center.lon + dlon));
            let cells = (hi.0 - lo.0 + 1) as i64 * (hi.1 - lo.1 + 1) as i64;
            if cells <= 4096 {
                let mut s = BTreeSet::new();
                for i in lo.0..=hi.0 {
                    for j in lo.1..=hi.1 {
                        if let Some(c) = self.idx.cell.get(&(i, j)) {
                            s.extend(c.iter().cloned());
                        }
                    }
                }
                sets.push(s);
            }
        }
        sets.sort_by_key(|s| s.len());
        let mut it = sets.into_iter();
        let first = it.next()?;
        Some(first)
    }

    /// Descriptions satisfying the query, URN ascending.
    pub fn lookup(&self, q: &Query) -> Vec<ResourceDescription> {
        match self.candidates(q) {
            Some(c) => c
                .iter()
                .filter_map(|u| self.records.get(u))
                .filter(|d| q.matches(d))
                .cloned()
                .collect(),
            None => self.records.values().filter(|d| q.matches(d)).cloned().collect(),
        }
    }

    pub fn count(&self, q: &Query) -> usize {
        self.lookup(q).len()
    }

    /// Registers a standing query. Current matches are not announced; only
    /// later changes to the match set are.
    pub fn subscribe(&mut self, query: Query, sink: Sender<Notification>) -> u64 {
        let id = self.next_sub;
        self.next_sub += 1;
        let matched = self.lookup(&query).into_iter().map(|d| d.urn).collect();
        self.subs.insert(
            id,
            Standing {
                query,
                matched,
                sink,
            },
        );
        id
    }

    pub fn unsubscribe(&mut self, id: u64) -> bool {
        self.subs.remove(&id).is_some()
    }

    /// Record counts keyed by (state, role).
    pub fn summary(&self) -> BTreeMap<(NodeState, NodeRole), usize> {
        let mut out = BTreeMap::new();
        for d in self.records.values() {
            *out.entry((d.state, d.role)).or_default() += 1;
        }
        out
    }
}
