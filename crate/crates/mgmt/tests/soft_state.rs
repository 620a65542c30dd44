mod common;

use std::time::Duration;

use citytb_bus::registry::*;
use citytb_bus::tags;
use citytb_core::NodeState;
use citytb_mgmt::{AgentConfig, Timeouts};
use citytb_rd::{Query, StateFilter};
use citytb_sim::FaultKind;
use common::{seed, urn, Plane};

fn ready(topo: &str) -> Plane {
    let mut p = Plane::new(&seed(topo));
    assert!(p.run_until(Duration::from_secs(180), |p| p.all_registered()));
    p
}

fn members(p: &Plane, gw: &str) -> Vec<String> {
    p.world
        .cluster(&urn(gw))
        .unwrap()
        .members
        .iter()
        .map(|m| m.node_id().to_string())
        .collect()
}

#[test]
fn heartbeat_every_thirty_seconds_per_gateway() {
    let mut p = Plane::new(&seed("small.topo"));
    p.run_for(Duration::from_secs(300));
    for gw in ["gw01", "gw02"] {
        let name = urn(gw).to_string();
        let hellos: Vec<_> = p
            .events(HELLO)
            .into_iter()
            .filter(|e| e.payload.str(tags::GATEWAY) == Some(name.as_str()))
            .collect();
        assert_eq!(hellos.len(), 10, "{gw}");
        assert!(hellos.windows(2).all(|w| w[0].published_at < w[1].published_at));
        assert_eq!(hellos.last().unwrap().payload.u64(tags::MEMBERS), Some(9));
    }
}

#[test]
fn hellos_are_buffered_while_the_bus_is_down() {
    let mut p = ready("small.topo");
    let before = p.broker.count(HELLO);
    p.broker.set_available(false);
    p.run_for(Duration::from_secs(60));
    assert!(p.agents.iter().any(|a| a.buffered() > 0));
    assert_eq!(p.broker.count(HELLO), before);
    p.broker.set_available(true);
    p.step();
    // Two periods, two gateways.
    assert_eq!(p.broker.count(HELLO), before + 4);
    assert!(p.agents.iter().all(|a| a.buffered() == 0));
}

#[test]
fn dead_node_is_invalidated_after_exactly_three_failed_probe_rounds() {
    // Portal invalidation is pushed out of the way so only the agent acts.
    let timeouts = Timeouts {
        invalidation_ms: 3_600_000,
        ..Timeouts::default()
    };
    let mut p = Plane::with(&seed("small.topo"), AgentConfig::default(), timeouts);
    assert!(p.run_until(Duration::from_secs(180), |p| p.all_registered()));
    let n = urn("n002").to_string();
    let failed = |p: &Plane| {
        p.events(NODE_STATUS_REQUEST)
            .into_iter()
            .filter(|e| e.payload.str(tags::URN) == Some(n.as_str()) && e.payload.bool(tags::ALIVE) == Some(false))
            .count()
    };
    let t = p.now();
    p.world.inject_fault(&urn("n002"), FaultKind::NodeDeath, t).unwrap();
    assert!(p.run_until(Duration::from_secs(300), |p| p.broker.count(NODE_INVALIDATION_REQUEST) > 0));
    assert_eq!(failed(&p), 3);
    assert!(p.now() - t <= Duration::from_secs(3 * 60 + 1));
    assert_eq!(p.state("n002"), Some(NodeState::Disabled));
    assert!(!p.available().contains(&urn("n002")));
    // Only that node.
    assert_eq!(p.portal.rd().count(&Query::all().in_state(StateFilter::Is(NodeState::Disabled))), 1);
}

#[test]
fn battery_level_reaches_the_directory() {
    let mut p = ready("small.topo");
    p.world.set_battery(&urn("n003"), 10.0).unwrap();
    p.run_for(Duration::from_secs(61));
    let n = urn("n003").to_string();
    let last = p
        .events(NODE_STATUS_REQUEST)
        .into_iter()
        .filter(|e| e.payload.str(tags::URN) == Some(n.as_str()))
        .last()
        .unwrap();
    assert_eq!(last.payload.f64(tags::BATTERY), Some(10.0));
    let d = p.portal.rd().get(&urn("n003")).unwrap();
    assert_eq!(d.hw_meta["battery"], "10");
}

#[test]
fn silent_gateway_disables_its_cluster_and_nothing_else() {
    let mut p = ready("small.topo");
    let t = p.now();
    p.world.inject_fault(&urn("gw01"), FaultKind::GatewayDeath, t).unwrap();
    p.run_until(Duration::from_secs(150), |p| p.state("gw01") == Some(NodeState::Disabled));
    assert_eq!(p.state("gw01"), Some(NodeState::Disabled));
    assert!(p.now() - t <= Duration::from_secs(90 + 60));
    p.settle();
    for m in members(&p, "gw01") {
        assert_eq!(p.state(&m), Some(NodeState::Disabled), "{m}");
        assert!(!p.available().contains(&urn(&m)));
    }
    for m in members(&p, "gw02") {
        assert_eq!(p.state(&m), Some(NodeState::Active), "{m}");
    }
    assert_eq!(p.state("gw02"), Some(NodeState::Active));
    assert_eq!(p.state("bus01"), Some(NodeState::Active));
    let mut expected = p.expected_available();
    expected.sort();
    assert_eq!(p.available(), expected);
    assert!(p.broker.count(REMOVE_GW_REQ) == 1 && p.broker.count(REMOVE_SENSOR_REQ) == 6);
    assert_eq!(p.broker.count(REMOVE_SERVICE_REQ), 8);
}

#[test]
fn revived_gateway_and_members_come_back() {
    let mut p = ready("small.topo");
    let t = p.now();
    p.world.inject_fault(&urn("gw01"), FaultKind::GatewayDeath, t).unwrap();
    p.run_for(Duration::from_secs(200));
    assert_eq!(p.state("gw01"), Some(NodeState::Disabled));
    let t = p.now();
    p.world.inject_fault(&urn("gw01"), FaultKind::Revive, t).unwrap();
    p.run_for(Duration::from_secs(31));
    assert_eq!(p.state("gw01"), Some(NodeState::Active));
    assert!(p.events(ADD_GW_REQ).len() >= 2);
    p.run_for(Duration::from_secs(60));
    for m in members(&p, "gw01") {
        assert_eq!(p.state(&m), Some(NodeState::Active), "{m}");
    }
    let mut expected = p.expected_available();
    expected.sort();
    assert_eq!(p.available(), expected);
    assert_eq!(expected.len(), 14);
}

#[test]
fn dead_cluster_is_deleted_after_a_day() {
    let mut p = ready("small.topo");
    let t = p.now();
    p.world.inject_fault(&urn("gw01"), FaultKind::GatewayDeath, t).unwrap();
    p.run_for(Duration::from_secs(200));
    let (_, delete_at) = p.portal.deadlines(&urn("gw01")).unwrap();
    assert!(delete_at <= t + Duration::from_secs(24 * 3600));
    // Step to just short of the deadline.
    while p.now() + Duration::from_secs(60) < delete_at {
        p.step();
    }
    assert_eq!(p.state("gw01"), Some(NodeState::Disabled));
    p.run_for(Duration::from_secs(120));
    assert_eq!(p.state("gw01"), Some(NodeState::Deleted));
    let deleted = p.portal.rd().lookup(&Query::all().in_state(StateFilter::Is(NodeState::Deleted)));
    assert_eq!(deleted.len(), 1 + members(&p, "gw01").len());
    assert_eq!(p.state("gw02"), Some(NodeState::Active));
    let lines: Vec<String> = p.portal.audit().iter().map(|l| l.to_string()).collect();
    assert!(lines.iter().any(|l| l.contains("gw01 disabled -> deleted")));
}

#[test]
fn removal_mid_experiment_notifies_the_controller() {
    let mut p = ready("small.topo");
    let now = p.now();
    let nodes = [urn("n001"), urn("n010")].into_iter().collect();
    let rd = p.portal.rd();
    let (_, key) = p
        .runtime
        .reserve("alice", "pw", &nodes, now, now + Duration::from_secs(3600), now, |u| {
            rd.get(u).map(|d| d.role)
        })
        .unwrap();
    let id = p.runtime.open_session(&key, now, None, &mut p.world).unwrap();
    p.world.inject_fault(&urn("n001"), FaultKind::NodeDeath, now).unwrap();
    p.run_for(Duration::from_secs(200));
    assert_eq!(p.state("n001"), Some(NodeState::Disabled));
    let events = p.runtime.drain_controller(id);
    assert!(events.iter().any(|e| matches!(e,
        citytb_exp::ControllerEvent::Status { urn: Some(u), message, .. }
            if u == &urn("n001") && message.contains("withdrawn"))));
    assert!(!p.runtime.is_available(&urn("n001")));
    assert!(p.runtime.is_available(&urn("n010")));
}
