use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::error::BusError;
use crate::event::ManagementEvent;
use crate::registry::Topic;
use crate::wire::{decode_event, encode_event, read_frame};

/// Restricts a subscription to some event types.
pub type Filter = BTreeSet<String>;

/// One event handed to a subscriber.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub topic: Topic,
    /// Index in the topic log; acknowledge with this value.
    pub position: u64,
    /// Position in the broker-wide publish order.
    pub global_seq: u64,
    pub event: ManagementEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub global_seq: u64,
    pub topic: Topic,
    pub event: ManagementEvent,
}

/// Anything that can carry management events: the in-process broker or a
/// TCP client of one.
pub trait EventBus: Send + Sync {
    fn publish(&self, topic: Topic, event: &ManagementEvent) -> Result<u64, BusError>;

    fn subscribe(
        &self,
        subscriber: &str,
        topic: Topic,
        durable: bool,
        filter: Option<Filter>,
    ) -> Result<Box<dyn EventStream>, BusError>;

    /// Publishes on the topic the registry assigns to the event type.
    fn publish_event(&self, event: &ManagementEvent) -> Result<u64, BusError> {
        let topic = event
            .topic()
            .ok_or_else(|| BusError::UnknownEventType(event.event_type.clone()))?;
        self.publish(topic, event)
    }
}

pub trait EventStream: Send {
    fn try_recv(&mut self) -> Result<Option<Delivery>, BusError>;
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Delivery>, BusError>;
    fn ack(&mut self, position: u64) -> Result<(), BusError>;
}

struct Stored {
    global_seq: u64,
    event: ManagementEvent,
}

struct Durable {
    acked: u64,
    filter: Option<Filter>,
}

struct Conn {
    subscriber: String,
    topic: Topic,
    durable: bool,
    filter: Option<Filter>,
    cursor: u64,
}

#[derive(Default)]
struct State {
    available: bool,
    next_global: u64,
    topics: [Vec<Stored>; 6],
    durable: HashMap<(String, Topic), Durable>,
    conns: HashMap<u64, Conn>,
    next_conn: u64,
}

struct Persist {
    dir: PathBuf,
    topic_files: Vec<File>,
    subs: File,
}

/// In-process broker. Cheap to share behind an `Arc`.
pub struct Broker {
    state: Mutex<State>,
    cond: Condvar,
    persist: Option<Mutex<Persist>>,
}

impl Broker {
    pub fn in_memory() -> Arc<Broker> {
        Arc::new(Broker {
            state: Mutex::new(State {
                available: true,
                ..State::default()
            }),
            cond: Condvar::new(),
            persist: None,
        })
    }

    /// Opens (or creates) a persistent broker, replaying its logs.
    pub fn open(dir: impl AsRef<Path>) -> Result<Arc<Broker>, BusError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let mut state = State {
            available: true,
            ..State::default()
        };
        let mut topic_files = Vec::new();
        for topic in Topic::ALL {
            let path = dir.join(format!("{}.log", topic.name()));
            if path.exists() {
                let mut r = BufReader::new(File::open(&path)?);
                loop {
                    let mut seq = [0u8; 8];
                    if r.read_exact(&mut seq).is_err() {
                        break;
                    }
                    let Ok(frame) = read_frame(&mut r) else {
                        tracing::warn!(topic = topic.name(), "ignoring torn record at end of log");
                        break;
                    };
                    let event = decode_event(&frame)
                        .map_err(|e| BusError::Protocol(format!("{}: {e}", path.display())))?;
                    let global_seq = u64::from_be_bytes(seq);
                    state.next_global = state.next_global.max(global_seq + 1);
                    state.topics[topic.index()].push(Stored { global_seq, event });
                }
            }
            topic_files.push(OpenOptions::new().create(true).append(true).open(&path)?);
        }
        let subs_path = dir.join("subscriptions.log");
        if subs_path.exists() {
            for line in BufReader::new(File::open(&subs_path)?).lines() {
                let line = line?;
                let parts: Vec<&str> = line.split(' ').collect();
                match parts.as_slice() {
                    ["durable", id, topic, filter] => {
                        let topic: Topic = topic.parse().map_err(BusError::Protocol)?;
                        let filter = (*filter != "-")
                            .then(|| filter.split(',').map(str::to_string).collect());
                        state
                            .durable
                            .entry((id.to_string(), topic))
                            .or_insert(Durable { acked: 0, filter: None })
                            .filter = filter;
                    }
                    ["ack", id, topic, pos] => {
                        let topic: Topic = topic.parse().map_err(BusError::Protocol)?;
                        let pos: u64 = pos.parse().map_err(|_| BusError::Protocol(line.clone()))?;
                        if let Some(d) = state.durable.get_mut(&(id.to_string(), topic)) {
                            d.acked = d.acked.max(pos);
                        }
                    }
                    _ => tracing::warn!(%line, "skipping unreadable subscription record"),
                }
            }
        }
        let subs = OpenOptions::new().create(true).append(true).open(&subs_path)?;
        Ok(Arc::new(Broker {
            state: Mutex::new(state),
            cond: Condvar::new(),
            persist: Some(Mutex::new(Persist {
                dir,
                topic_files,
                subs,
            })),
        }))
    }

    pub fn data_dir(&self) -> Option<PathBuf> {
        self.persist.as_ref().map(|p| p.lock().unwrap().dir.clone())
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Simulates a broker outage: publishes fail with `Unavailable`.
    pub fn set_available(&self, up: bool) {
        self.lock().available = up;
        self.cond.notify_all();
    }

    pub fn is_available(&self) -> bool {
        self.lock().available
    }

    fn append_subs(&self, line: String) -> Result<(), BusError> {
        if let Some(p) = &self.persist {
            let mut p = p.lock().unwrap();
            writeln!(p.subs, "{line}")?;
            p.subs.flush()?;
        }
        Ok(())
    }

    fn publish_inner(&self, topic: Topic, event: &ManagementEvent) -> Result<u64, BusError> {
        let spec = crate::registry::lookup(&event.event_type)
            .ok_or_else(|| BusError::UnknownEventType(event.event_type.clone()))?;
        if spec.topic != topic {
            return Err(BusError::TopicMismatch {
                event_type: event.event_type.clone(),
                expected: spec.topic,
                got: topic,
            });
        }
        let frame = encode_event(event)?;
        let mut state = self.lock();
        if !state.available {
            return Err(BusError::Unavailable);
        }
        let global_seq = state.next_global;
        if let Some(p) = &self.persist {
            let mut p = p.lock().unwrap();
            let f = &mut p.topic_files[topic.index()];
            let mut rec = global_seq.to_be_bytes().to_vec();
            rec.extend_from_slice(&frame);
            f.write_all(&rec)?;
            f.flush()?;
        }
        state.next_global += 1;
        state.topics[topic.index()].push(Stored {
            global_seq,
            event: event.clone(),
        });
        drop(state);
        self.cond.notify_all();
        Ok(global_seq)
    }

    fn subscribe_inner(
        self: &Arc<Self>,
        subscriber: &str,
        topic: Topic,
        durable: bool,
        filter: Option<Filter>,
    ) -> Result<Subscription, BusError> {
        if subscriber.is_empty() || subscriber.contains(char::is_whitespace) {
            return Err(BusError::BadSubscriber(subscriber.to_string()));
        }
        let mut state = self.lock();
        let cursor = if durable {
            let key = (subscriber.to_string(), topic);
            let entry = state.durable.entry(key).or_insert(Durable {
                acked: 0,
                filter: None,
            });
            entry.filter = filter.clone();
            let acked = entry.acked;
            // A durable reconnect replaces any live connection under that name.
            state
                .conns
                .retain(|_, c| !(c.durable && c.subscriber == subscriber && c.topic == topic));
            let filter_text = filter
                .as_ref()
                .map(|f| f.iter().cloned().collect::<Vec<_>>().join(","))
                .unwrap_or_else(|| "-".into());
            drop(state);
            self.append_subs(format!("durable {subscriber} {} {filter_text}", topic.name()))?;
            state = self.lock();
            acked
        } else {
            state.topics[topic.index()].len() as u64
        };
        let id = state.next_conn;
        state.next_conn += 1;
        state.conns.insert(
            id,
            Conn {
                subscriber: subscriber.to_string(),
                topic,
                durable,
                filter,
                cursor,
            },
        );
        Ok(Subscription {
            broker: self.clone(),
            id,
        })
    }

    /// Subscribes with the concrete stream type.
    pub fn subscribe_local(
        self: &Arc<Self>,
        subscriber: &str,
        topic: Topic,
        durable: bool,
        filter: Option<Filter>,
    ) -> Result<Subscription, BusError> {
        self.subscribe_inner(subscriber, topic, durable, filter)
    }

    /// Records that a durable subscriber has processed everything up to and
    /// including `position`.
    pub fn ack(&self, subscriber: &str, topic: Topic, position: u64) -> Result<(), BusError> {
        let mut state = self.lock();
        let Some(d) = state.durable.get_mut(&(subscriber.to_string(), topic)) else {
            return Ok(());
        };
        if position + 1 <= d.acked {
            return Ok(());
        }
        d.acked = position + 1;
        drop(state);
        self.append_subs(format!("ack {subscriber} {} {}", topic.name(), position + 1))
    }

    fn next_for(&self, state: &mut State, conn: u64) -> Result<Option<Delivery>, BusError> {
        let State { conns, topics, .. } = state;
        let c = conns.get_mut(&conn).ok_or(BusError::Disconnected)?;
        let log = &topics[c.topic.index()];
        while (c.cursor as usize) < log.len() {
            let pos = c.cursor;
            c.cursor += 1;
            let stored = &log[pos as usize];
            if c
                .filter
                .as_ref()
                .is_some_and(|f| !f.contains(&stored.event.event_type))
            {
                continue;
            }
            return Ok(Some(Delivery {
                topic: c.topic,
                position: pos,
                global_seq: stored.global_seq,
                event: stored.event.clone(),
            }));
        }
        Ok(None)
    }

    fn disconnect(&self, conn: u64) {
        self.lock().conns.remove(&conn);
        self.cond.notify_all();
    }

    /// Every published event in broker-wide order.
    pub fn audit_log(&self) -> Vec<AuditEntry> {
        let state = self.lock();
        let mut out: Vec<AuditEntry> = Topic::ALL
            .iter()
            .flat_map(|t| {
                state.topics[t.index()].iter().map(|s| AuditEntry {
                    global_seq: s.global_seq,
                    topic: *t,
                    event: s.event.clone(),
                })
            })
            .collect();
        out.sort_by_key(|e| e.global_seq);
        out
    }

    /// Number of events published with this type.
    pub fn count(&self, event_type: &str) -> usize {
        let state = self.lock();
        state
            .topics
            .iter()
            .flatten()
            .filter(|s| s.event.event_type == event_type)
            .count()
    }

    pub fn topic_len(&self, topic: Topic) -> usize {
        self.lock().topics[topic.index()].len()
    }

    /// Events held but not yet acknowledged by a durable subscriber.
    pub fn backlog(&self, subscriber: &str, topic: Topic) -> Option<u64> {
        let state = self.lock();
        let d = state.durable.get(&(subscriber.to_string(), topic))?;
        Some(state.topics[topic.index()].len() as u64 - d.acked)
    }
}

impl EventBus for Arc<Broker> {
    fn publish(&self, topic: Topic, event: &ManagementEvent) -> Result<u64, BusError> {
        self.publish_inner(topic, event)
    }

    fn subscribe(
        &self,
        subscriber: &str,
        topic: Topic,
        durable: bool,
        filter: Option<Filter>,
    ) -> Result<Box<dyn EventStream>, BusError> {
        Ok(Box::new(self.subscribe_inner(subscriber, topic, durable, filter)?))
    }
}

/// Pull-based stream over one topic. Dropping it disconnects.
pub struct Subscription {
    broker: Arc<Broker>,
    id: u64,
}

impl Subscription {
    fn subscriber_topic(&self) -> Result<(String, Topic, bool), BusError> {
        let state = self.broker.lock();
        let c = state.conns.get(&self.id).ok_or(BusError::Disconnected)?;
        Ok((c.subscriber.clone(), c.topic, c.durable))
    }
}

impl EventStream for Subscription {
    fn try_recv(&mut self) -> Result<Option<Delivery>, BusError> {
        let mut state = self.broker.lock();
        self.broker.next_for(&mut state, self.id)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Delivery>, BusError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.broker.lock();
        loop {
            if let Some(d) = self.broker.next_for(&mut state, self.id)? {
                return Ok(Some(d));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            state = self
                .broker
                .cond
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    fn ack(&mut self, position: u64) -> Result<(), BusError> {
        let (subscriber, topic, durable) = self.subscriber_topic()?;
        if durable {
            self.broker.ack(&subscriber, topic, position)?;
        }
        Ok(())
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.broker.disconnect(self.id);
    }
}
