mod common;

use std::sync::mpsc;

use citytb_core::{GeoPoint, NodeRole, NodeState, Position, SimTime};
use citytb_rd::doc::{self, Update};
use citytb_rd::{Change, Notification, Predicate, Query, RdError, ResourceDirectory, StateFilter};
use common::*;
use proptest::prelude::*;

fn here() -> GeoPoint {
    GeoPoint::new(43.4623, -3.8099)
}

#[test]
fn register_is_idempotent_and_role_is_immutable() {
    let mut rd = ResourceDirectory::new();
    let d = sensor("lp0001", NodeRole::ExperimentationIoT, &["temperature"], "gw01", here());
    let r = rd.register(d.clone()).unwrap();
    assert!(r.created);
    assert_eq!(r.uri, "/resources/urn:smartsantander:santander:lp0001");
    let again = rd.register(d.clone()).unwrap();
    assert_eq!(again.uri, r.uri);
    assert!(!again.created);
    assert_eq!(rd.len(), 1);
    let mut changed = d.clone();
    changed.role = NodeRole::ServiceOnlyIoT;
    assert_eq!(
        rd.register(changed),
        Err(RdError::Conflict {
            urn: d.urn.clone(),
            field: "role"
        })
    );
    let mut invalid = d;
    invalid.capabilities.clear();
    assert!(matches!(rd.register(invalid), Err(RdError::Validation(_))));
}

#[test]
fn state_filter_hides_disabled_and_deleted() {
    let mut rd = ResourceDirectory::new();
    let d = sensor("lp0001", NodeRole::ExperimentationIoT, &["temperature"], "gw01", here());
    rd.register(d.clone()).unwrap();
    rd.update(&d.urn, &Update::state(NodeState::Disabled)).unwrap();
    assert!(rd.lookup(&Query::all()).is_empty());
    rd.delete(&d.urn).unwrap();
    assert!(rd.lookup(&Query::all()).is_empty());
    let deleted = rd.lookup(&Query::all().in_state(StateFilter::Is(NodeState::Deleted)));
    assert_eq!(deleted.len(), 1);
    assert_eq!(
        rd.update(&urn("nope"), &Update::seen(SimTime(5))),
        Err(RdError::NotFound(urn("nope")))
    );
}

#[test]
fn update_merges_mutable_fields() {
    let mut rd = ResourceDirectory::new();
    let d = sensor("lp0002", NodeRole::ExperimentationIoT, &["light"], "gw01", here());
    rd.register(d.clone()).unwrap();
    rd.update(&d.urn, &Update::seen(SimTime(9000)).meta("battery", 7)).unwrap();
    let got = rd.get(&d.urn).unwrap();
    assert_eq!(got.last_seen, SimTime(9000));
    assert_eq!(got.hw_meta["battery"], "7");
    assert_eq!(got.hw_meta["class"], "lamppost");
    assert_eq!(got.capabilities, d.capabilities);
}

#[test]
fn deleted_resource_registers_as_new_record_and_keeps_history() {
    let mut rd = ResourceDirectory::new();
    let d = sensor("lp0003", NodeRole::ExperimentationIoT, &["light"], "gw01", here());
    rd.register(d.clone()).unwrap();
    rd.delete(&d.urn).unwrap();
    let mut again = d.clone();
    again.registered_at = SimTime(50_000);
    again.last_seen = SimTime(50_000);
    assert!(rd.register(again.clone()).unwrap().created);
    assert_eq!(rd.get(&d.urn), Some(&again));
    assert_eq!(rd.history(&d.urn).len(), 1);
    assert_eq!(rd.history(&d.urn)[0].state, NodeState::Deleted);
    assert_eq!(rd.len(), 1);
}

#[test]
fn unknown_query_field_is_rejected() {
    assert!(matches!(
        Query::from_pairs([("colour", "red")]),
        Err(RdError::BadQuery(_))
    ));
    assert!(matches!(
        Query::from_pairs([("lat", "43.4")]),
        Err(RdError::BadQuery(_))
    ));
    let q = Query::from_pairs([("role", "ServiceOnlyIoT"), ("phenomenon", "car-presence")]).unwrap();
    assert_eq!(Query::from_pairs(q.to_pairs().iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap(), q);
}

#[test]
fn standing_queries_report_appearance_and_disappearance() {
    let mut rd = ResourceDirectory::new();
    let (tx, rx) = mpsc::channel();
    let id = rd.subscribe(Query::all().with(Predicate::Phenomenon("no2".into())), tx);
    rd.register(sensor("lp0010", NodeRole::ExperimentationIoT, &["temperature"], "gw01", here()))
        .unwrap();
    assert!(rx.try_recv().is_err());
    let bus = vehicle("bus001", &["no2", "co"]);
    rd.register(bus.clone()).unwrap();
    assert_eq!(
        rx.try_iter().collect::<Vec<_>>(),
        vec![Notification {
            subscription: id,
            change: Change::Appeared,
            urn: bus.urn.clone()
        }]
    );
    rd.update(&bus.urn, &Update::state(NodeState::Disabled)).unwrap();
    let got: Vec<_> = rx.try_iter().collect();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].change, Change::Disappeared);
}

#[test]
fn store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rd.log");
    let before: Vec<_> = {
        let mut rd = ResourceDirectory::open(&path).unwrap();
        for i in 0..30 {
            let id = format!("lp{i:04}");
            rd.register(sensor(&id, NodeRole::ExperimentationIoT, &["temperature"], "gw01", here()))
                .unwrap();
        }
        rd.update(&urn("lp0003"), &Update::state(NodeState::Disabled)).unwrap();
        rd.delete(&urn("lp0004")).unwrap();
        rd.purge(&urn("lp0005")).unwrap();
        let mut again = sensor("lp0004", NodeRole::ExperimentationIoT, &["light"], "gw01", here());
        again.registered_at = SimTime(2000);
        again.last_seen = SimTime(2000);
        rd.register(again).unwrap();
        rd.update(&urn("lp0006"), &Update::seen(SimTime(77)).meta("note", "two\nlines")).unwrap();
        rd.scan().cloned().collect()
    };
    let rd = ResourceDirectory::open(&path).unwrap();
    let after: Vec<_> = rd.scan().cloned().collect();
    assert_eq!(after, before);
    assert_eq!(rd.history(&urn("lp0004")).len(), 1);
}

fn description() -> impl Strategy<Value = citytb_core::ResourceDescription> {
    let phen = prop::sample::subsequence(vec!["temperature", "light", "noise", "co", "no2"], 1..4);
    (
        0u32..500,
        prop::sample::select(vec![NodeRole::ExperimentationIoT, NodeRole::ServiceOnlyIoT]),
        phen,
        -90.0f64..90.0,
        -180.0f64..180.0,
        any::<bool>(),
        prop::sample::select(vec![NodeState::New, NodeState::Active, NodeState::Disabled, NodeState::Deleted]),
        proptest::collection::btree_map("[a-z]{1,6}", "\\PC{0,12}", 0..3),
        any::<Option<u8>>(),
    )
        .prop_map(|(n, role, phen, lat, lon, mobile, state, meta, acc)| {
            let mut d = if mobile {
                vehicle(&format!("v{n}"), &phen)
            } else {
                sensor(&format!("n{n}"), role, &phen, "gw01", GeoPoint::new(lat, lon))
            };
            d.state = state;
            d.hw_meta.extend(meta);
            d.capabilities[0].accuracy = acc.map(|a| a as f64 / 7.0);
            d
        })
}

proptest! {
    #[test]
    fn canonical_encoding_round_trips(d in description()) {
        let text = doc::encode(&d);
        prop_assert_eq!(doc::decode(&text).unwrap(), d.clone());
        prop_assert_eq!(doc::encode(&doc::decode(&text).unwrap()), text);
    }
}

#[derive(Debug, Clone)]
enum Op {
    Register(citytb_core::ResourceDescription),
    State(u32, NodeState),
    Delete(u32),
    Purge(u32),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        description().prop_map(Op::Register),
        (0u32..500, prop::sample::select(vec![NodeState::Active, NodeState::Disabled])).prop_map(|(n, s)| Op::State(n, s)),
        (0u32..500).prop_map(Op::Delete),
        (0u32..500).prop_map(Op::Purge),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Notifications must equal the deltas of the match set, recomputed by
    // brute force after every write.
    #[test]
    fn notifications_equal_match_set_deltas(ops in proptest::collection::vec(op(), 1..60), near in any::<bool>()) {
        let mut rd = ResourceDirectory::new();
        let mut q = Query::all().with(Predicate::Phenomenon("light".into()));
        if near {
            q = q.near(GeoPoint::new(0.0, 0.0), 8_000_000.0);
        }
        let (tx, rx) = mpsc::channel();
        let id = rd.subscribe(q.clone(), tx);
        let mut matched = std::collections::BTreeSet::new();
        let mut expected = Vec::new();
        let target = |n: u32| [urn(&format!("n{n}")), urn(&format!("v{n}"))];
        for op in ops {
            match op {
                Op::Register(d) => { let _ = rd.register(d); }
                Op::State(n, s) => for u in target(n) { let _ = rd.update(&u, &Update::state(s)); },
                Op::Delete(n) => for u in target(n) { let _ = rd.delete(&u); },
                Op::Purge(n) => for u in target(n) { let _ = rd.purge(&u); },
            }
            let now: std::collections::BTreeSet<_> = rd.scan().filter(|d| {
                d.state == NodeState::Active
                    && d.capabilities.iter().any(|c| c.phenomenon == "light")
                    && (!near || matches!(d.position, Position::Fixed(p) if p.distance_m(&GeoPoint::new(0.0, 0.0)) <= 8_000_000.0))
            }).map(|d| d.urn.clone()).collect();
            for u in now.difference(&matched) {
                expected.push(Notification { subscription: id, change: Change::Appeared, urn: u.clone() });
            }
            for u in matched.difference(&now) {
                expected.push(Notification { subscription: id, change: Change::Disappeared, urn: u.clone() });
            }
            matched = now;
        }
        let got: Vec<_> = rx.try_iter().collect();
        prop_assert_eq!(got, expected);
    }
}
