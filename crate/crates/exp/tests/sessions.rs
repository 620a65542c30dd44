use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use citytb_core::{NodeImage, NodeRole, SimTime, Urn};
use citytb_exp::{
    AvailableNode, ControllerEvent, ExpError, ExperimentRuntime, Mode, MotapConfig, SecretKey,
};
use citytb_sim::{FaultKind, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMALL: &str = include_str!("../../../seeds/small.topo");

fn urn(id: &str) -> Urn {
    Urn::new("smartsantander", "santander", id).unwrap()
}

/// The small seed with every experimentation device running `echo`.
fn echo_world() -> World {
    let text: String = SMALL
        .lines()
        .map(|l| {
            if l.contains("role=experimentation") {
                format!("{l} image=echo\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    World::parse(&text).unwrap()
}

fn runtime(world: &World) -> ExperimentRuntime {
    let mut rt = ExperimentRuntime::new(
        [("alice".into(), "pw-a".into()), ("bob".into(), "pw-b".into())],
        MotapConfig::default(),
    );
    for n in world.nodes().filter(|n| n.role == NodeRole::ExperimentationIoT) {
        rt.add_available(AvailableNode {
            urn: n.urn.clone(),
            role: n.role,
            gateway: n.cluster.clone(),
            position: n.fixed_position(),
            phenomena: n.sensors.iter().map(|c| c.phenomenon.clone()).collect(),
        });
    }
    rt
}

fn role_in(world: &World) -> impl Fn(&Urn) -> Option<NodeRole> + '_ {
    |u| world.node(u).map(|n| n.role)
}

fn reserve(rt: &mut ExperimentRuntime, world: &World, user: &str, ids: &[&str], from: u64, to: u64) -> SecretKey {
    let pw = if user == "alice" { "pw-a" } else { "pw-b" };
    let urns: BTreeSet<Urn> = ids.iter().map(|i| urn(i)).collect();
    rt.reserve(user, pw, &urns, SimTime::from_secs(from), SimTime::from_secs(to), world.now(), role_in(world))
        .unwrap()
        .1
}

fn outputs(events: &[ControllerEvent]) -> Vec<(Urn, Vec<u8>)> {
    events
        .iter()
        .filter_map(|e| match e {
            ControllerEvent::Output { source, payload, .. } => Some((source.clone(), payload.clone())),
            _ => None,
        })
        .collect()
}

#[test]
fn session_opens_only_inside_the_interval() {
    let mut world = echo_world();
    let mut rt = runtime(&world);
    let key = reserve(&mut rt, &world, "alice", &["n001", "n002", "n003"], 10, 20);
    assert_eq!(
        rt.open_session(&key, world.now(), None, &world),
        Err(ExpError::NotStartedYet(SimTime::from_secs(10)))
    );
    let mut random = [0u8; 32];
    rand::thread_rng().fill(&mut random);
    assert_eq!(
        rt.open_session(&SecretKey::from(random), world.now(), None, &world),
        Err(ExpError::InvalidKey)
    );
    world.step(Duration::from_secs(10));
    let id = rt.open_session(&key, world.now(), None, &world).unwrap();
    assert_eq!(rt.session(id).unwrap().endpoint(), format!("/sessions/{id}"));
    // One virtual connection per reserved node, all on gw01's link.
    let link = rt.link(&urn("gw01")).unwrap();
    let owned = ["n001", "n002", "n003"].iter().filter(|i| link.owner(&urn(i)) == Some(id)).count();
    assert_eq!(owned, 3);
    assert_eq!(rt.open_session(&key, world.now(), None, &world), Ok(id));
    world.step(Duration::from_secs(10));
    assert_eq!(rt.open_session(&key, world.now(), None, &world), Err(ExpError::Expired));
    assert_eq!(rt.send(id, &urn("n001"), b"late", &mut world), Err(ExpError::Expired));
}

#[test]
fn echo_reaches_the_controller() {
    let mut world = echo_world();
    let mut rt = runtime(&world);
    let key = reserve(&mut rt, &world, "alice", &["n001"], 0, 600);
    let id = rt.open_session(&key, world.now(), Some("http://127.0.0.1:9/ctl".into()), &world).unwrap();
    rt.drain_controller(id);
    rt.send(id, &urn("n001"), b"ping", &mut world).unwrap();
    let events = rt.drain_controller(id);
    assert_eq!(outputs(&events), vec![(urn("n001"), b"ping".to_vec())]);
    assert_eq!(rt.send(id, &urn("n002"), b"x", &mut world), Err(ExpError::NotInReservation(urn("n002"))));
    rt.reset(id, &urn("n001"), &mut world).unwrap();
    let banner = outputs(&rt.drain_controller(id));
    assert_eq!(banner, vec![(urn("n001"), b"boot echo v1".to_vec())]);
    world.audit_planes().unwrap();
}

#[test]
fn dead_node_yields_status_and_unreachable() {
    let mut world = echo_world();
    let mut rt = runtime(&world);
    let key = reserve(&mut rt, &world, "alice", &["n002"], 0, 600);
    let id = rt.open_session(&key, world.now(), None, &world).unwrap();
    world.inject_fault(&urn("n002"), FaultKind::NodeDeath, world.now()).unwrap();
    world.step(Duration::from_millis(1));
    assert_eq!(rt.send(id, &urn("n002"), b"x", &mut world), Err(ExpError::NodeUnreachable(urn("n002"))));
    let events = rt.drain_controller(id);
    assert!(events.iter().any(|e| matches!(e, ControllerEvent::Status { urn: Some(u), .. } if *u == urn("n002"))));
}

#[test]
fn vehicle_output_reaches_its_session_over_gprs() {
    let mut world = echo_world();
    let mut rt = runtime(&world);
    let key = reserve(&mut rt, &world, "alice", &["n001", "bus01"], 0, 600);
    let id = rt.open_session(&key, world.now(), None, &world).unwrap();
    rt.drain_controller(id);
    rt.send(id, &urn("bus01"), b"hi", &mut world).unwrap();
    assert_eq!(outputs(&rt.drain_controller(id)), vec![(urn("bus01"), b"hi".to_vec())]);
    assert_eq!(rt.link(&urn("bus01")).unwrap().owner(&urn("bus01")), Some(id));
}

#[test]
fn two_sessions_ten_thousand_messages_no_crosstalk() {
    let mut world = echo_world();
    let mut rt = runtime(&world);
    let a_nodes = ["n001", "n002", "n003", "n010", "bus01"];
    let b_nodes = ["n004", "n006", "n007", "n011", "n012", "taxi01"];
    let ka = reserve(&mut rt, &world, "alice", &a_nodes, 0, 3600);
    let kb = reserve(&mut rt, &world, "bob", &b_nodes, 0, 3600);
    let sa = rt.open_session(&ka, world.now(), None, &world).unwrap();
    let sb = rt.open_session(&kb, world.now(), None, &world).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut sent: BTreeMap<Urn, u32> = BTreeMap::new();
    for _ in 0..10_000 {
        let (sid, pool) = if rng.gen_bool(0.5) { (sa, &a_nodes[..]) } else { (sb, &b_nodes[..]) };
        let target = urn(pool[rng.gen_range(0..pool.len())]);
        let seq = sent.entry(target.clone()).or_default();
        rt.send(sid, &target, format!("{target}#{seq}").as_bytes(), &mut world).unwrap();
        *seq += 1;
    }
    for (sid, pool) in [(sa, &a_nodes[..]), (sb, &b_nodes[..])] {
        let own: BTreeSet<Urn> = pool.iter().map(|i| urn(i)).collect();
        let mut next: BTreeMap<Urn, u32> = BTreeMap::new();
        let outs = outputs(&rt.drain_controller(sid));
        for (source, payload) in &outs {
            assert!(own.contains(source), "{source} leaked into session {sid}");
            let n = next.entry(source.clone()).or_default();
            assert_eq!(payload, format!("{source}#{n}").as_bytes());
            *n += 1;
        }
        let total: u32 = own.iter().map(|u| sent.get(u).copied().unwrap_or(0)).sum();
        assert_eq!(outs.len() as u32, total);
        // The trace log obeys the same isolation.
        let s = rt.session(sid).unwrap();
        assert!(s.trace.iter().filter_map(|t| t.urn.as_ref()).all(|u| own.contains(u)));
    }
}

#[test]
fn flash_is_confined_to_the_reservation() {
    let mut world = echo_world();
    let mut rt = runtime(&world);
    let key = reserve(&mut rt, &world, "alice", &["n001", "n002"], 0, 600);
    let id = rt.open_session(&key, world.now(), None, &world).unwrap();
    let image = NodeImage::new("blinky", 1, "blink", vec![0xAB; 300]);
    assert_eq!(
        rt.flash(id, Mode::Unicast, &[urn("n003")], &image, &mut world).unwrap_err(),
        ExpError::NotInReservation(urn("n003"))
    );
    let big = NodeImage::new("huge", 1, "blink", vec![0; 128 * 1024 + 1]);
    assert!(matches!(
        rt.flash(id, Mode::Broadcast, &[], &big, &mut world),
        Err(ExpError::ImageTooLarge { .. })
    ));
    let report = rt.flash(id, Mode::Broadcast, &[], &image, &mut world).unwrap();
    assert_eq!(report.completed.len(), 2);
    for u in ["n001", "n002"] {
        assert_eq!(world.node(&urn(u)).unwrap().installed.version, 2);
    }
    assert_eq!(world.node(&urn("n003")).unwrap().installed.version, 1);
    rt.drain_controller(id);
    rt.send(id, &urn("n001"), b"x", &mut world).unwrap();
    assert_eq!(outputs(&rt.drain_controller(id)), vec![(urn("n001"), b"led on".to_vec())]);
}
