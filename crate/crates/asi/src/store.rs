use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::mpsc::{channel, Receiver, Sender};

use citytb_core::{GeoPoint, Observation, SimTime, Urn};
use serde::Serialize;

use crate::error::AsiError;
use crate::filter::{Aggregate, Filter, HistoryQuery};

const CELL_DEG: f64 = 0.01;
const METERS_PER_DEG: f64 = 111_194.9;

fn cell(p: &GeoPoint) -> (i32, i32) {
    ((p.lat / CELL_DEG).floor() as i32, (p.lon / CELL_DEG).floor() as i32)
}

/// One aggregated window `[start, end)`. Empty windows are not reported.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowValue {
    pub start: SimTime,
    pub end: SimTime,
    pub count: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "points", rename_all = "lowercase")]
pub enum Series {
    Raw(Vec<Observation>),
    Aggregated(Vec<WindowValue>),
}

impl Series {
    pub fn len(&self) -> usize {
        match self {
            Series::Raw(v) => v.len(),
            Series::Aggregated(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dropped observation, kept for the audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub observation: Observation,
    pub error: AsiError,
}

struct Subscriber {
    filter: Filter,
    sink: Sender<Observation>,
}

/// Append-only observation log with indexes by source, phenomenon, geo cell
/// and time. Only sources in the service-registration set may write.
#[derive(Default)]
pub struct ObservationStore {
    log: Vec<Observation>,
    by_urn: HashMap<Urn, Vec<usize>>,
    by_phenomenon: HashMap<String, Vec<usize>>,
    by_cell: HashMap<(i32, i32), Vec<usize>>,
    by_time: BTreeSet<(SimTime, usize)>,
    registered: BTreeSet<Urn>,
    last_ts: HashMap<Urn, SimTime>,
    rejected: Vec<Rejection>,
    subscribers: BTreeMap<u64, Subscriber>,
    next_sub: u64,
    file: Option<File>,
}

#[derive(Serialize, serde::Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum Record {
    Reg { urn: Urn },
    Unreg { urn: Urn },
    Obs { obs: Observation },
}

impl ObservationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens or creates a JSON-lines log and replays it.
    pub fn open(path: &Path) -> Result<Self, AsiError> {
        let mut store = ObservationStore::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: Record = serde_json::from_str(&line)
                    .map_err(|e| AsiError::Io(format!("line {}: {e}", n + 1)))?;
                match rec {
                    Record::Reg { urn } => store.register_source(urn),
                    Record::Unreg { urn } => {
                        store.unregister_source(&urn);
                    }
                    Record::Obs { obs } => store.ingest(obs)?,
                }
            }
        }
        store.file = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(store)
    }

    fn persist(&mut self, rec: &Record) {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(rec).expect("records serialize");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::error!("observation log write failed: {e}");
            }
        }
    }

    pub fn register_source(&mut self, urn: Urn) {
        if self.registered.insert(urn.clone()) {
            self.persist(&Record::Reg { urn });
        }
    }

    /// Closes the gate for `urn`. False if it was not open.
    pub fn unregister_source(&mut self, urn: &Urn) -> bool {
        let was = self.registered.remove(urn);
        if was {
            self.persist(&Record::Unreg { urn: urn.clone() });
        }
        was
    }

    pub fn is_registered(&self, urn: &Urn) -> bool {
        self.registered.contains(urn)
    }

    pub fn registered(&self) -> impl Iterator<Item = &Urn> {
        self.registered.iter()
    }

    pub fn ingest(&mut self, obs: Observation) -> Result<(), AsiError> {
        let check = if !self.registered.contains(&obs.source) {
            Err(AsiError::NotServiceRegistered(obs.source.clone()))
        } else {
            match self.last_ts.get(&obs.source) {
                Some(&last) if obs.timestamp < last => Err(AsiError::OutOfOrder {
                    urn: obs.source.clone(),
                    last,
                    got: obs.timestamp,
                }),
                _ => Ok(()),
            }
        };
        if let Err(error) = check {
            tracing::debug!(source = %obs.source, "observation dropped: {error}");
            self.rejected.push(Rejection {
                observation: obs,
                error: error.clone(),
            });
            return Err(error);
        }
        self.persist(&Record::Obs { obs: obs.clone() });
        let i = self.log.len();
        self.last_ts.insert(obs.source.clone(), obs.timestamp);
        self.by_urn.entry(obs.source.clone()).or_default().push(i);
        self.by_phenomenon
            .entry(obs.phenomenon.clone())
            .or_default()
            .push(i);
        self.by_cell.entry(cell(&obs.position)).or_default().push(i);
        self.by_time.insert((obs.timestamp, i));
        self.subscribers
            .retain(|_, s| !s.filter.matches(&obs) || s.sink.send(obs.clone()).is_ok());
        self.log.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn rejected(&self) -> &[Rejection] {
        &self.rejected
    }

    pub fn subscribe(&mut self, filter: Filter) -> (u64, Receiver<Observation>) {
        let (tx, rx) = channel();
        let id = self.next_sub;
        self.next_sub += 1;
        self.subscribers.insert(id, Subscriber { filter, sink: tx });
        (id, rx)
    }

    pub fn unsubscribe(&mut self, id: u64) -> bool {
        self.subscribers.remove(&id).is_some()
    }

    fn geo_candidates(&self, f: &Filter) -> Option<Vec<usize>> {
        let g = f.geo?;
        let dlat = g.radius_m / METERS_PER_DEG;
        let dlon = dlat / g.center.lat.to_radians().cos().abs().max(1e-6);
        if dlat > 2.0 || dlon > 2.0 {
            return None;
        }
        let lo = cell(&GeoPoint::new(g.center.lat - dlat, g.center.lon - dlon));
        let hi = cell(&GeoPoint::new(g.center.lat + dlat, g.center.lon + dlon));
        let mut out = Vec::new();
        for a in lo.0..=hi.0 {
            for b in lo.1..=hi.1 {
                if let Some(v) = self.by_cell.get(&(a, b)) {
                    out.extend_from_slice(v);
                }
            }
        }
        Some(out)
    }

    fn union<K: std::hash::Hash + Eq>(
        idx: &HashMap<K, Vec<usize>>,
        keys: impl Iterator<Item = K>,
    ) -> Vec<usize> {
        keys.filter_map(|k| idx.get(&k))
            .flat_map(|v| v.iter().copied())
            .collect()
    }

    /// Matching observations ordered by timestamp, then ingest order.
    pub fn select(&self, filter: &Filter, from: SimTime, to: SimTime) -> Vec<&Observation> {
        if from >= to {
            return Vec::new();
        }
        let mut options = Vec::new();
        if !filter.urns.is_empty() {
            options.push(Self::union(&self.by_urn, filter.urns.iter().cloned()));
        }
        if !filter.phenomena.is_empty() {
            options.push(Self::union(
                &self.by_phenomenon,
                filter.phenomena.iter().cloned(),
            ));
        }
        if let Some(c) = self.geo_candidates(filter) {
            options.push(c);
        }
        let in_range = |o: &Observation| o.timestamp >= from && o.timestamp < to;
        match options.into_iter().min_by_key(Vec::len) {
            Some(mut idx) => {
                idx.retain(|&i| in_range(&self.log[i]) && filter.matches(&self.log[i]));
                idx.sort_by_key(|&i| (self.log[i].timestamp, i));
                idx.into_iter().map(|i| &self.log[i]).collect()
            }
            None => self
                .by_time
                .range((from, 0)..(to, 0))
                .map(|&(_, i)| &self.log[i])
                .filter(|o| filter.matches(o))
                .collect(),
        }
    }

    pub fn query_history(&self, q: &HistoryQuery) -> Result<Series, AsiError> {
        q.check()?;
        let hits = self.select(&q.filter, q.from, q.to);
        let Some(agg) = q.aggregate else {
            return Ok(Series::Raw(hits.into_iter().cloned().collect()));
        };
        let width = q.window.map(|w| w.as_millis() as u64);
        let mut windows: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for o in hits {
            let k = width.map_or(0, |w| (o.timestamp.0 - q.from.0) / w);
            windows.entry(k).or_default().push(o.value);
        }
        let out = windows
            .into_iter()
            .map(|(k, vals)| {
                let (start, end) = match width {
                    Some(w) => (
                        SimTime(q.from.0 + k * w),
                        SimTime((q.from.0 + (k + 1) * w).min(q.to.0)),
                    ),
                    None => (q.from, q.to),
                };
                let value = match agg {
                    Aggregate::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    Aggregate::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Aggregate::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
                };
                WindowValue {
                    start,
                    end,
                    count: vals.len(),
                    value,
                }
            })
            .collect();
        Ok(Series::Aggregated(out))
    }

    /// Latest observation of `phenomenon` per source with timestamp in
    /// `[at - staleness, at]`.
    pub fn latest_per_source(
        &self,
        phenomenon: &str,
        at: SimTime,
        staleness: std::time::Duration,
    ) -> Vec<&Observation> {
        let oldest = at.saturating_sub(staleness);
        let mut latest: BTreeMap<&Urn, &Observation> = BTreeMap::new();
        for &i in self.by_phenomenon.get(phenomenon).into_iter().flatten() {
            let o = &self.log[i];
            if o.timestamp >= oldest && o.timestamp <= at {
                // Later log entries win on timestamp ties.
                latest
                    .entry(&o.source)
                    .and_modify(|cur| {
                        if o.timestamp >= cur.timestamp {
                            *cur = o
                        }
                    })
                    .or_insert(o);
            }
        }
        latest.into_values().collect()
    }
}
