use std::path::PathBuf;

use citytb_core::NodeRole;
use citytb_sim::{load_topology, World};

fn seed(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../seeds").join(name)
}

#[test]
fn santander_seed_has_deployment_counts() {
    let (clusters, nodes) = load_topology(seed("santander.topo")).unwrap();
    assert_eq!(clusters.len(), 23);
    let class = |c: &str| nodes.iter().filter(|n| n.class == c).count();
    assert_eq!(class("lamppost"), 740);
    assert_eq!(class("parking"), 390);
    assert_eq!(class("irrigation"), 48);
    assert_eq!(class("vehicle"), 150);
    assert_eq!(nodes.iter().filter(|n| n.mobility.is_mobile()).count(), 150);
    let fixed_exp = nodes
        .iter()
        .filter(|n| n.role == NodeRole::ExperimentationIoT && !n.mobility.is_mobile())
        .count();
    assert_eq!(fixed_exp, 740);
    let car = nodes
        .iter()
        .filter(|n| n.sensors.iter().any(|s| s.phenomenon == "car-presence"))
        .count();
    assert_eq!(car, 390);
    let temp_lamps = nodes
        .iter()
        .filter(|n| n.class == "lamppost" && n.sensors.iter().any(|s| s.phenomenon == "temperature"))
        .count();
    assert_eq!(temp_lamps, 600);
}

#[test]
fn bundled_seeds_load() {
    let w = World::load(seed("minimal.topo")).unwrap();
    assert_eq!(w.clusters().count(), 1);
    assert_eq!(w.clusters().next().unwrap().members.len(), 1);
    let w = World::load(seed("small.topo")).unwrap();
    assert_eq!(w.gateways().count(), 2);
    assert_eq!(w.nodes().count(), 20);
    let w = World::load(seed("irrigation.topo")).unwrap();
    assert_eq!(w.nodes().count(), 16);
}
