use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::Duration;

use citytb_core::{NodeImage, Urn};
use citytb_exp::{disseminate, ExpError, MotapConfig, MotapTransfer};
use citytb_sim::{FaultKind, FrameKind, World};

const MESH: &str = include_str!("../../../seeds/mesh50.topo");

fn urn(id: &str) -> Urn {
    Urn::new("smartsantander", "santander", id).unwrap()
}

fn mesh(loss: &str) -> World {
    World::parse(&MESH.replace("loss=0.2", &format!("loss={loss}"))).unwrap()
}

/// Longest shortest path between any two devices of the cluster mesh.
fn diameter(world: &World) -> u32 {
    let c = world.clusters().next().unwrap();
    let mut adj: BTreeMap<&Urn, Vec<&Urn>> = BTreeMap::new();
    for (a, b) in &c.mesh_edges {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut best = 0;
    for &src in adj.keys() {
        let mut dist = BTreeMap::from([(src, 0u32)]);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !dist.contains_key(v) {
                    dist.insert(v, dist[u] + 1);
                    q.push_back(v);
                }
            }
        }
        assert_eq!(dist.len(), adj.len(), "mesh is connected");
        best = best.max(*dist.values().max().unwrap());
    }
    best
}

fn members(world: &World) -> BTreeSet<Urn> {
    world.nodes().map(|n| n.urn.clone()).collect()
}

fn image(size: usize) -> NodeImage {
    NodeImage::new("fw", 2, "blink", (0..size).map(|i| (i * 7 % 251) as u8).collect())
}

#[test]
fn mesh_seed_has_fifty_nodes_and_diameter_six() {
    let w = mesh("0");
    assert_eq!(members(&w).len(), 50);
    assert_eq!(diameter(&w), 6);
}

#[test]
fn lossless_broadcast_meets_the_pipelining_bound() {
    let mut w = mesh("0");
    let targets = members(&w);
    let img = image(4096);
    let r = disseminate(&mut w, &img, &targets, MotapConfig::default()).unwrap();
    let chunks = 4096 / 64;
    assert_eq!(r.chunks, chunks);
    assert!(r.failed.is_empty());
    assert_eq!(r.completed.len(), 50);
    let bound = diameter(&w) + chunks as u32;
    assert!(r.rounds <= bound, "{} rounds > {bound}", r.rounds);
    // Each node completes exactly depth + chunks - 1 rounds in.
    let rt = w.route_table(&urn("gw01")).unwrap();
    for (u, round) in &r.completed {
        assert_eq!(*round, rt.hops(u).unwrap() + chunks as u32 - 1);
    }
    for n in w.nodes() {
        assert_eq!(n.installed.version, 2);
        assert_eq!(n.installed.behavior, "blink");
    }
    w.audit_planes().unwrap();
}

#[test]
fn lossy_broadcast_still_completes_with_more_frames() {
    let mut clean = mesh("0");
    let targets = members(&clean);
    let img = image(4096);
    let base = disseminate(&mut clean, &img, &targets, MotapConfig::default()).unwrap();
    let mut w = mesh("0.2");
    let r = disseminate(&mut w, &img, &targets, MotapConfig::default()).unwrap();
    assert!(r.failed.is_empty(), "{:?}", r.failed);
    assert_eq!(r.completed.len(), 50);
    assert!(r.data_frames + r.ack_frames > base.data_frames + base.ack_frames);
    assert!(r.rounds > base.rounds);
    assert_eq!(w.frames_sent(FrameKind::Motap), r.data_frames + r.ack_frames);
}

#[test]
fn version_changes_only_when_the_image_is_complete() {
    let mut w = mesh("0.2");
    let target = urn("m01");
    let mut t = MotapTransfer::new(&w, &image(1000), &BTreeSet::from([target.clone()]), MotapConfig::default()).unwrap();
    let mut rounds = 0;
    while t.step(&mut w) {
        rounds += 1;
        let v = w.node(&target).unwrap().installed.version;
        let done = t.report().completed.contains_key(&target);
        assert_eq!(v, if done { 2 } else { 1 }, "round {rounds}, {} chunks held", t.progress(&target));
    }
    assert_eq!(w.node(&target).unwrap().installed.version, 2);
    // Reflashing the same image is accepted and bumps again.
    disseminate(&mut w, &image(1000), &BTreeSet::from([target.clone()]), MotapConfig::default()).unwrap();
    assert_eq!(w.node(&target).unwrap().installed.version, 3);
}

#[test]
fn unreachable_target_is_reported_and_others_complete() {
    let mut w = World::parse(include_str!("../../../seeds/small.topo")).unwrap();
    // Only the dead node fails.
    w.inject_fault(&urn("n003"), FaultKind::NodeDeath, w.now()).unwrap();
    w.step(Duration::from_millis(1));
    let targets = BTreeSet::from([urn("n003"), urn("n001")]);
    let r = disseminate(&mut w, &image(256), &targets, MotapConfig::default()).unwrap();
    assert_eq!(r.failed, BTreeSet::from([urn("n003")]));
    assert!(r.completed.contains_key(&urn("n001")));
    assert_eq!(w.node(&urn("n003")).unwrap().installed.version, 1);
}

#[test]
fn dead_link_exhausts_the_retry_budget() {
    let mut w = mesh("0");
    let target = urn("m01");
    // Every edge around the corner node drops everything.
    w.inject_fault(&target, FaultKind::LinkDegrade(0.999_999), w.now()).unwrap();
    w.step(Duration::from_millis(1));
    let r = disseminate(&mut w, &image(128), &BTreeSet::from([target.clone()]), MotapConfig::default()).unwrap();
    assert_eq!(r.failed, BTreeSet::from([target]));
}

#[test]
fn size_limits() {
    let w = mesh("0");
    let t = BTreeSet::from([urn("m01")]);
    assert!(matches!(
        MotapTransfer::new(&w, &image(128 * 1024 + 1), &t, MotapConfig::default()),
        Err(ExpError::ImageTooLarge { .. })
    ));
    assert!(MotapTransfer::new(&w, &image(128 * 1024), &t, MotapConfig::default()).is_ok());
    assert_eq!(
        MotapTransfer::new(&w, &image(0), &t, MotapConfig::default()).err(),
        Some(ExpError::EmptyImage)
    );
}

#[test]
fn gprs_vehicle_takes_one_chunk_per_round() {
    let mut w = World::parse(include_str!("../../../seeds/small.topo")).unwrap();
    let r = disseminate(&mut w, &image(640), &BTreeSet::from([urn("bus01")]), MotapConfig::default()).unwrap();
    assert_eq!(r.completed[&urn("bus01")], 10);
}
