//! Multihop over-the-air programming.
//!
//! The image is cut into fixed-size chunks and pushed down each gateway's
//! shortest-path tree, one chunk per tree edge per round. A relay forwards a
//! chunk the round after it arrives, so transfers pipeline along the tree.
//!
//! After every data frame the receiver answers with a bitmap of the chunks it
//! holds. A bitmap that shows an in-flight chunk missing is a NACK and spends
//! one retry of that chunk on that hop; a lost bitmap only delays the sender.
//! A hop that exhausts its retry budget is abandoned and every target behind
//! it fails. Targets install the image only once all chunks are present.

use std::collections::{BTreeMap, BTreeSet};

use citytb_core::{NodeImage, Urn};
use citytb_sim::{FrameKind, NodeOutput, World};
use rand::Rng;

use crate::error::ExpError;

pub const DEFAULT_CHUNK_SIZE: usize = 64;
pub const DEFAULT_RETRY_BUDGET: u32 = 8;
pub const MAX_IMAGE_SIZE: usize = 128 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotapConfig {
    pub chunk_size: usize,
    pub retry_budget: u32,
    /// Safety stop; targets still pending after this many rounds fail.
    pub max_rounds: u32,
}

impl Default for MotapConfig {
    fn default() -> Self {
        MotapConfig {
            chunk_size: DEFAULT_CHUNK_SIZE,
            retry_budget: DEFAULT_RETRY_BUDGET,
            max_rounds: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Unicast,
    Multicast,
    Broadcast,
}

/// Sender-side state of one tree hop.
#[derive(Debug)]
struct Hop {
    parent: Urn,
    acked: Vec<bool>,
    in_flight: Vec<bool>,
    nacks: Vec<u32>,
    failed: bool,
}

#[derive(Debug, Default)]
struct Tree {
    /// Child -> hop toward it. Gateways are never children.
    hops: BTreeMap<Urn, Hop>,
    /// Targets at or below each tree node.
    below: BTreeMap<Urn, BTreeSet<Urn>>,
    gprs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotapReport {
    pub chunks: usize,
    pub rounds: u32,
    pub data_frames: u64,
    pub ack_frames: u64,
    /// Completed targets with the round they completed in.
    pub completed: BTreeMap<Urn, u32>,
    pub failed: BTreeSet<Urn>,
    /// Boot banners of the reflashed nodes.
    pub outputs: Vec<NodeOutput>,
}

pub struct MotapTransfer {
    image: NodeImage,
    cfg: MotapConfig,
    chunks: Vec<Vec<u8>>,
    trees: Vec<Tree>,
    have: BTreeMap<Urn, Vec<bool>>,
    targets: BTreeSet<Urn>,
    report: MotapReport,
}

impl MotapTransfer {
    pub fn new(
        world: &World,
        image: &NodeImage,
        targets: &BTreeSet<Urn>,
        cfg: MotapConfig,
    ) -> Result<Self, ExpError> {
        if image.bytes.is_empty() {
            return Err(ExpError::EmptyImage);
        }
        if image.size() > MAX_IMAGE_SIZE {
            return Err(ExpError::ImageTooLarge {
                size: image.size(),
                max: MAX_IMAGE_SIZE,
            });
        }
        if !citytb_sim::behavior::is_known(&image.behavior) {
            return Err(ExpError::UnknownBehavior(image.behavior.clone()));
        }
        let chunks: Vec<Vec<u8>> = image.bytes.chunks(cfg.chunk_size.max(1)).map(<[u8]>::to_vec).collect();
        let n = chunks.len();
        let mut report = MotapReport {
            chunks: n,
            rounds: 0,
            data_frames: 0,
            ack_frames: 0,
            completed: BTreeMap::new(),
            failed: BTreeSet::new(),
            outputs: Vec::new(),
        };
        let mut by_cluster: BTreeMap<Option<Urn>, Vec<Urn>> = BTreeMap::new();
        for t in targets {
            match world.node(t) {
                Some(node) if node.alive => by_cluster.entry(node.cluster.clone()).or_default().push(t.clone()),
                _ => {
                    report.failed.insert(t.clone());
                }
            }
        }
        let mut trees = Vec::new();
        let mut have = BTreeMap::new();
        let hop = |parent: &Urn| Hop {
            parent: parent.clone(),
            acked: vec![false; n],
            in_flight: vec![false; n],
            nacks: vec![0; n],
            failed: false,
        };
        for (cluster, members) in by_cluster {
            let mut tree = Tree::default();
            match cluster {
                // Vehicles take the image over their own GPRS link.
                None => {
                    tree.gprs = true;
                    for t in members {
                        tree.hops.insert(t.clone(), hop(&t));
                        tree.below.entry(t.clone()).or_default().insert(t.clone());
                        have.insert(t, vec![false; n]);
                    }
                }
                Some(gw) => {
                    let table = world.route_table(&gw);
                    have.insert(gw.clone(), vec![true; n]);
                    for t in members {
                        let path = match &table {
                            Some(rt) if rt.reaches(&t) => rt.path(&t).expect("reachable"),
                            _ => {
                                report.failed.insert(t);
                                continue;
                            }
                        };
                        let mut child = t.clone();
                        tree.below.entry(child.clone()).or_default().insert(t.clone());
                        for parent in path {
                            tree.hops.entry(child.clone()).or_insert_with(|| hop(&parent));
                            tree.below.entry(parent.clone()).or_default().insert(t.clone());
                            have.entry(child.clone()).or_insert_with(|| vec![false; n]);
                            child = parent;
                        }
                    }
                }
            }
            trees.push(tree);
        }
        let targets = targets.iter().filter(|t| !report.failed.contains(*t)).cloned().collect();
        Ok(MotapTransfer {
            image: image.clone(),
            cfg,
            chunks,
            trees,
            have,
            targets,
            report,
        })
    }

    fn pending(&self, t: &Urn) -> bool {
        !self.report.completed.contains_key(t) && !self.report.failed.contains(t)
    }

    pub fn is_done(&self) -> bool {
        self.targets.iter().all(|t| !self.pending(t))
    }

    /// Chunks `urn` currently holds.
    pub fn progress(&self, urn: &Urn) -> usize {
        self.have.get(urn).map_or(0, |h| h.iter().filter(|x| **x).count())
    }

    /// Runs one round. Returns false once nothing is left to do.
    pub fn step(&mut self, world: &mut World) -> bool {
        if self.is_done() {
            return false;
        }
        self.report.rounds += 1;
        let round = self.report.rounds;
        let snapshot = self.have.clone();
        let mut newly_failed = Vec::new();
        for tree in &mut self.trees {
            for (child, hop) in tree.hops.iter_mut() {
                let wanted = tree.below[child]
                    .iter()
                    .any(|t| !self.report.completed.contains_key(t) && !self.report.failed.contains(t));
                if hop.failed || !wanted {
                    continue;
                }
                let parent_has = |c: usize| tree.gprs || snapshot[&hop.parent][c];
                let next = (0..self.chunks.len())
                    .find(|&c| parent_has(c) && !hop.acked[c] && !hop.in_flight[c])
                    // Nothing new to send: repeat the oldest unconfirmed chunk.
                    .or_else(|| (0..self.chunks.len()).find(|&c| hop.in_flight[c]));
                let Some(c) = next else { continue };
                let (loss, kind, fwd, back) = if tree.gprs {
                    (0.0, FrameKind::Gprs, vec![child.clone()], vec![child.clone()])
                } else {
                    (
                        world.mesh_loss(&hop.parent, child),
                        FrameKind::Motap,
                        vec![hop.parent.clone(), child.clone()],
                        vec![child.clone(), hop.parent.clone()],
                    )
                };
                self.report.data_frames += 1;
                world.record(kind, fwd);
                hop.in_flight[c] = true;
                if world.rng().gen::<f64>() >= loss {
                    self.have.get_mut(child).unwrap()[c] = true;
                }
                self.report.ack_frames += 1;
                world.record(kind, back);
                if world.rng().gen::<f64>() < loss {
                    continue;
                }
                let bitmap = &self.have[child];
                for k in 0..self.chunks.len() {
                    if bitmap[k] {
                        hop.acked[k] = true;
                    } else if hop.in_flight[k] {
                        hop.nacks[k] += 1;
                        if hop.nacks[k] > self.cfg.retry_budget {
                            hop.failed = true;
                        }
                    }
                    hop.in_flight[k] = false;
                }
                if hop.failed {
                    tracing::warn!(%child, parent = %hop.parent, "hop exhausted its retry budget");
                    newly_failed.extend(tree.below[child].iter().cloned());
                }
            }
        }
        for t in newly_failed {
            if self.pending(&t) {
                self.report.failed.insert(t);
            }
        }
        let ready: Vec<Urn> = self
            .targets
            .iter()
            .filter(|t| self.pending(t) && self.have[*t].iter().all(|x| *x))
            .cloned()
            .collect();
        for t in ready {
            let bytes = self.chunks.concat();
            match world.install_image(&t, &self.image, &bytes) {
                Ok(out) => {
                    self.report.completed.insert(t, round);
                    self.report.outputs.push(out);
                }
                Err(e) => {
                    tracing::warn!(target = %t, "install failed: {e}");
                    self.report.failed.insert(t);
                }
            }
        }
        if round >= self.cfg.max_rounds {
            let stuck: Vec<Urn> = self.targets.iter().filter(|t| self.pending(t)).cloned().collect();
            self.report.failed.extend(stuck);
        }
        !self.is_done()
    }

    pub fn report(&self) -> &MotapReport {
        &self.report
    }

    pub fn run(mut self, world: &mut World) -> MotapReport {
        while self.step(world) {}
        self.report
    }
}

/// Flashes `targets` to completion or failure.
pub fn disseminate(
    world: &mut World,
    image: &NodeImage,
    targets: &BTreeSet<Urn>,
    cfg: MotapConfig,
) -> Result<MotapReport, ExpError> {
    Ok(MotapTransfer::new(world, image, targets, cfg)?.run(world))
}
