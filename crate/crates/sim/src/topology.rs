//! Topology seed files and cluster graphs.
//!
//! The file grammar is documented in `docs/topology-format.md`. In short:
//!
//! ```text
//! namespace smartsantander santander
//! link range=75 loss=0 latency=20 seed=7
//! gateway gw01 lat=43.4623 lon=-3.8099 uplink=wired
//! node n0001 role=experimentation class=lamppost cluster=gw01 lat=.. lon=.. sensors=temperature:celsius
//! mobile bus001 role=experimentation class=vehicle route=43.46:-3.80;43.47:-3.81 speed=8 sensors=no2:ugm3
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;
use std::time::Duration;

use citytb_core::{parse_duration, Capability, ConnectionKind, GeoPoint, NodeRole, Urn};

use crate::error::{SimError, TopologyError};
use crate::link::LinkModel;

pub const DEFAULT_EMISSION_PERIOD: Duration = Duration::from_secs(60);
pub const DEFAULT_BEHAVIOR: &str = "default-sense";

#[derive(Debug, Clone, PartialEq)]
pub struct GatewaySpec {
    pub urn: Urn,
    pub position: GeoPoint,
    pub uplink: ConnectionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub urn: Urn,
    pub role: NodeRole,
    pub class: String,
    pub cluster: Option<String>,
    pub position: Option<GeoPoint>,
    pub route: Vec<GeoPoint>,
    pub speed_mps: f64,
    pub sensors: Vec<Capability>,
    pub period: Duration,
    pub feeds_services: bool,
    pub behavior: String,
    pub battery: f64,
}

impl NodeSpec {
    pub fn is_mobile(&self) -> bool {
        !self.route.is_empty()
    }
}

/// Parsed topology seed, before graph construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyFile {
    pub authority: String,
    pub testbed: String,
    pub link: LinkModel,
    pub gateways: Vec<GatewaySpec>,
    pub nodes: Vec<NodeSpec>,
}

impl TopologyFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TopologyError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut file = TopologyFile {
            authority: "smartsantander".into(),
            testbed: "santander".into(),
            link: LinkModel::default(),
            gateways: Vec::new(),
            nodes: Vec::new(),
        };
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| TopologyError::Parse { line, msg };
            let mut words = content.split_whitespace();
            let kind = words.next().unwrap_or_default();
            match kind {
                "namespace" => {
                    let (Some(a), Some(t), None) = (words.next(), words.next(), words.next())
                    else {
                        return Err(err("namespace takes <authority> <testbed>".into()));
                    };
                    file.authority = a.to_string();
                    file.testbed = t.to_string();
                }
                "link" => {
                    let kv = KeyValues::parse(words, line)?;
                    let link = LinkModel {
                        radio_range_m: kv.f64_or("range", file.link.radio_range_m)?,
                        loss: kv.f64_or("loss", file.link.loss)?,
                        latency_ms: kv.u64_or("latency", file.link.latency_ms)?,
                        seed: kv.u64_or("seed", file.link.seed)?,
                    };
                    if link.radio_range_m <= 0.0 || !(0.0..=1.0).contains(&link.loss) {
                        return Err(err("range must be > 0 and loss in [0,1]".into()));
                    }
                    kv.finish(&["range", "loss", "latency", "seed"])?;
                    file.link = link;
                }
                "gateway" => {
                    let id = words.next().ok_or_else(|| err("gateway needs an id".into()))?;
                    let kv = KeyValues::parse(words, line)?;
                    let urn = file.urn(id, line)?;
                    let uplink = match kv.get("uplink").unwrap_or("wired") {
                        "wired" => ConnectionKind::Wired,
                        "gprs" => ConnectionKind::Gprs,
                        other => return Err(err(format!("bad uplink {other:?}"))),
                    };
                    let position = GeoPoint::new(kv.f64("lat")?, kv.f64("lon")?);
                    kv.finish(&["lat", "lon", "uplink"])?;
                    file.gateways.push(GatewaySpec {
                        urn,
                        position,
                        uplink,
                    });
                }
                "node" | "mobile" => {
                    let id = words.next().ok_or_else(|| err(format!("{kind} needs an id")))?;
                    let kv = KeyValues::parse(words, line)?;
                    let urn = file.urn(id, line)?;
                    let role: NodeRole = kv
                        .get("role")
                        .unwrap_or("experimentation")
                        .parse()
                        .map_err(|e| err(format!("{e}")))?;
                    if role == NodeRole::ParticipatorySensing {
                        return Err(err("participatory nodes are not part of the topology".into()));
                    }
                    let sensors = match kv.get("sensors") {
                        Some(s) => parse_sensors(s).map_err(err)?,
                        None => Vec::new(),
                    };
                    if role.requires_capabilities() && sensors.is_empty() {
                        return Err(err(format!("{role} node needs sensors")));
                    }
                    let period = match kv.get("period") {
                        Some(p) => parse_duration(p).map_err(|e| err(e.to_string()))?,
                        None => DEFAULT_EMISSION_PERIOD,
                    };
                    if period.is_zero() {
                        return Err(err("period must be positive".into()));
                    }
                    let feeds_services = match kv.get("services").unwrap_or("yes") {
                        "yes" | "true" => true,
                        "no" | "false" => false,
                        other => return Err(err(format!("bad services flag {other:?}"))),
                    };
                    let mut spec = NodeSpec {
                        urn,
                        role,
                        class: kv.get("class").unwrap_or("sensor").to_string(),
                        cluster: None,
                        position: None,
                        route: Vec::new(),
                        speed_mps: 0.0,
                        sensors,
                        period,
                        feeds_services,
                        behavior: kv.get("image").unwrap_or(DEFAULT_BEHAVIOR).to_string(),
                        battery: kv.f64_or("battery", 100.0)?,
                    };
                    if kind == "node" {
                        spec.cluster = Some(
                            kv.get("cluster")
                                .ok_or_else(|| err("node needs cluster=<gateway-id>".into()))?
                                .to_string(),
                        );
                        spec.position = Some(GeoPoint::new(kv.f64("lat")?, kv.f64("lon")?));
                        kv.finish(&[
                            "role", "class", "cluster", "lat", "lon", "sensors", "period",
                            "services", "image", "battery",
                        ])?;
                    } else {
                        spec.route = parse_route(
                            kv.get("route")
                                .ok_or_else(|| err("mobile needs route=".into()))?,
                        )
                        .map_err(err)?;
                        spec.speed_mps = kv.f64("speed")?;
                        kv.finish(&[
                            "role", "class", "route", "speed", "sensors", "period", "services",
                            "image", "battery",
                        ])?;
                    }
                    file.nodes.push(spec);
                }
                other => return Err(err(format!("unknown record kind {other:?}"))),
            }
        }
        Ok(file)
    }

    fn urn(&self, id: &str, line: usize) -> Result<Urn, TopologyError> {
        Urn::new(self.authority.clone(), self.testbed.clone(), id).map_err(|e| {
            TopologyError::Parse {
                line,
                msg: e.to_string(),
            }
        })
    }

    /// Builds the cluster graphs and checks that every member can reach its
    /// gateway over the management mesh.
    pub fn clusters(&self) -> Result<Vec<ClusterTopology>, TopologyError> {
        let mut seen = BTreeSet::new();
        for urn in self
            .gateways
            .iter()
            .map(|g| &g.urn)
            .chain(self.nodes.iter().map(|n| &n.urn))
        {
            if !seen.insert(urn.clone()) {
                return Err(TopologyError::DuplicateUrn(urn.clone()));
            }
        }
        let mut by_gateway: BTreeMap<&str, Vec<&NodeSpec>> = self
            .gateways
            .iter()
            .map(|g| (g.urn.node_id(), Vec::new()))
            .collect();
        for node in &self.nodes {
            let Some(cluster) = &node.cluster else {
                continue;
            };
            match by_gateway.get_mut(cluster.as_str()) {
                Some(members) => members.push(node),
                None => {
                    return Err(TopologyError::UnknownCluster {
                        node: node.urn.clone(),
                        cluster: cluster.clone(),
                    })
                }
            }
        }
        let range = self.link.radio_range_m;
        let mut clusters = Vec::new();
        for gw in &self.gateways {
            let members = &by_gateway[gw.urn.node_id()];
            let mut points: Vec<(&Urn, GeoPoint)> = vec![(&gw.urn, gw.position)];
            points.extend(
                members
                    .iter()
                    .map(|n| (&n.urn, n.position.expect("fixed node has a position"))),
            );
            let mut edges = BTreeSet::new();
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    if points[i].1.distance_m(&points[j].1) <= range {
                        edges.insert(edge(points[i].0, points[j].0));
                    }
                }
            }
            let cluster = ClusterTopology::new(
                gw.urn.clone(),
                members.iter().map(|n| n.urn.clone()).collect(),
                edges,
            );
            let table = cluster.route_table(|_| true, |_, _| true);
            if let Some(orphan) = cluster.members.iter().find(|m| !table.reaches(m)) {
                return Err(TopologyError::Orphan(orphan.clone()));
            }
            clusters.push(cluster);
        }
        Ok(clusters)
    }
}

struct KeyValues<'a> {
    line: usize,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> KeyValues<'a> {
    fn parse(words: impl Iterator<Item = &'a str>, line: usize) -> Result<Self, TopologyError> {
        let mut pairs = Vec::new();
        for w in words {
            let (k, v) = w.split_once('=').ok_or_else(|| TopologyError::Parse {
                line,
                msg: format!("expected key=value, got {w:?}"),
            })?;
            pairs.push((k, v));
        }
        Ok(KeyValues { line, pairs })
    }

    fn get(&self, key: &str) -> Option<&'a str> {
        self.pairs.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
    }

    fn err(&self, msg: String) -> TopologyError {
        TopologyError::Parse {
            line: self.line,
            msg,
        }
    }

    fn f64(&self, key: &str) -> Result<f64, TopologyError> {
        let v = self.get(key).ok_or_else(|| self.err(format!("missing {key}=")))?;
        v.parse()
            .map_err(|_| self.err(format!("bad number for {key}: {v:?}")))
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, TopologyError> {
        if self.get(key).is_some() {
            self.f64(key)
        } else {
            Ok(default)
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64, TopologyError> {
        match self.get(key) {
            Some(v) => v
                .parse()
                .map_err(|_| self.err(format!("bad integer for {key}: {v:?}"))),
            None => Ok(default),
        }
    }

    fn finish(&self, allowed: &[&str]) -> Result<(), TopologyError> {
        match self.pairs.iter().find(|(k, _)| !allowed.contains(k)) {
            Some((k, _)) => Err(self.err(format!("unknown field {k:?}"))),
            None => Ok(()),
        }
    }
}

fn parse_sensors(text: &str) -> Result<Vec<Capability>, String> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            let mut parts = s.split(':');
            let phenomenon = parts.next().unwrap_or_default();
            let unit = parts
                .next()
                .ok_or_else(|| format!("sensor {s:?} needs phenomenon:unit"))?;
            let accuracy = match parts.next() {
                Some(a) => Some(a.parse().map_err(|_| format!("bad accuracy in {s:?}"))?),
                None => None,
            };
            if phenomenon.is_empty() || unit.is_empty() {
                return Err(format!("bad sensor {s:?}"));
            }
            Ok(Capability {
                phenomenon: phenomenon.to_string(),
                unit: unit.to_string(),
                accuracy,
            })
        })
        .collect()
}

fn parse_route(text: &str) -> Result<Vec<GeoPoint>, String> {
    let points: Vec<GeoPoint> = text
        .split(';')
        .map(|wp| {
            let (lat, lon) = wp
                .split_once(':')
                .ok_or_else(|| format!("bad waypoint {wp:?}"))?;
            Ok(GeoPoint::new(
                lat.parse().map_err(|_| format!("bad latitude {lat:?}"))?,
                lon.parse().map_err(|_| format!("bad longitude {lon:?}"))?,
            ))
        })
        .collect::<Result<_, String>>()?;
    if points.is_empty() {
        return Err("empty route".into());
    }
    Ok(points)
}

/// Normalized undirected edge.
pub fn edge(a: &Urn, b: &Urn) -> (Urn, Urn) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

/// One gateway-headed cluster and its management mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTopology {
    pub gateway: Urn,
    pub members: BTreeSet<Urn>,
    pub mesh_edges: BTreeSet<(Urn, Urn)>,
    adjacency: BTreeMap<Urn, BTreeSet<Urn>>,
}

impl ClusterTopology {
    pub fn new(gateway: Urn, members: BTreeSet<Urn>, mesh_edges: BTreeSet<(Urn, Urn)>) -> Self {
        let mut adjacency: BTreeMap<Urn, BTreeSet<Urn>> = BTreeMap::new();
        adjacency.entry(gateway.clone()).or_default();
        for m in &members {
            adjacency.entry(m.clone()).or_default();
        }
        for (a, b) in &mesh_edges {
            adjacency.entry(a.clone()).or_default().insert(b.clone());
            adjacency.entry(b.clone()).or_default().insert(a.clone());
        }
        ClusterTopology {
            gateway,
            members,
            mesh_edges,
            adjacency,
        }
    }

    pub fn neighbors(&self, urn: &Urn) -> impl Iterator<Item = &Urn> {
        self.adjacency.get(urn).into_iter().flatten()
    }

    pub fn contains(&self, urn: &Urn) -> bool {
        urn == &self.gateway || self.members.contains(urn)
    }

    /// Breadth-first routing table rooted at the gateway over the nodes and
    /// edges that are currently up.
    pub fn route_table(
        &self,
        node_up: impl Fn(&Urn) -> bool,
        edge_up: impl Fn(&Urn, &Urn) -> bool,
    ) -> RouteTable {
        let mut dist: HashMap<Urn, u32> = HashMap::new();
        if !node_up(&self.gateway) {
            return RouteTable {
                gateway: self.gateway.clone(),
                dist,
                next_hop: HashMap::new(),
            };
        }
        let mut queue = VecDeque::new();
        dist.insert(self.gateway.clone(), 0);
        queue.push_back(self.gateway.clone());
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for v in self.neighbors(&u) {
                if !dist.contains_key(v) && node_up(v) && edge_up(&u, v) {
                    dist.insert(v.clone(), du + 1);
                    queue.push_back(v.clone());
                }
            }
        }
        let mut next_hop = HashMap::new();
        for (v, &dv) in &dist {
            if dv == 0 {
                continue;
            }
            // Neighbors iterate in URN order, so the first match is the lowest id.
            let hop = self
                .neighbors(v)
                .find(|u| dist.get(*u) == Some(&(dv - 1)) && edge_up(v, u))
                .expect("BFS parent exists");
            next_hop.insert(v.clone(), hop.clone());
        }
        RouteTable {
            gateway: self.gateway.clone(),
            dist,
            next_hop,
        }
    }
}

/// Shortest-hop next-hop table toward one gateway.
#[derive(Debug, Clone)]
pub struct RouteTable {
    pub gateway: Urn,
    dist: HashMap<Urn, u32>,
    next_hop: HashMap<Urn, Urn>,
}

impl RouteTable {
    pub fn reaches(&self, urn: &Urn) -> bool {
        self.dist.contains_key(urn)
    }

    pub fn hops(&self, urn: &Urn) -> Option<u32> {
        self.dist.get(urn).copied()
    }

    pub fn next_hop(&self, urn: &Urn) -> Option<&Urn> {
        self.next_hop.get(urn)
    }

    /// Hops from `from` to the gateway, excluding `from` and ending with the
    /// gateway itself.
    pub fn path(&self, from: &Urn) -> Result<Vec<Urn>, SimError> {
        if !self.reaches(from) || from == &self.gateway {
            return Err(SimError::NoRoute(from.clone()));
        }
        let mut path = Vec::new();
        let mut cur = from;
        while let Some(next) = self.next_hop.get(cur) {
            path.push(next.clone());
            cur = next;
        }
        Ok(path)
    }

    /// Deepest hop count of any reachable node.
    pub fn depth(&self) -> u32 {
        self.dist.values().copied().max().unwrap_or(0)
    }

    /// Children of `urn` in the shortest-path tree, in URN order.
    pub fn children(&self, urn: &Urn) -> Vec<Urn> {
        let mut kids: Vec<Urn> = self
            .next_hop
            .iter()
            .filter(|(_, parent)| *parent == urn)
            .map(|(child, _)| child.clone())
            .collect();
        kids.sort();
        kids
    }
}
