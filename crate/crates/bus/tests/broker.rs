use std::collections::{BTreeSet, HashMap};

use std::thread;
use std::time::Duration;

use citytb_bus::registry::{self, *};
use citytb_bus::tcp::{BusServer, RemoteBus};
use citytb_bus::{
    Broker, BusError, Channel, CorrelationId, Dedup, EventBus, EventStream, Kind,
    ManagementEvent, Payload, Topic,
};
use citytb_core::SimTime;

const REG_REQ: Topic = Topic::new(Channel::Registration, Kind::Request);
const MON_REQ: Topic = Topic::new(Channel::Monitoring, Kind::Request);

fn reg(n: u64, origin: &str) -> ManagementEvent {
    ManagementEvent::new(
        NODE_REG_REQUEST,
        CorrelationId::derive(origin, n),
        SimTime(n),
        Payload::new()
            .with_str(tags::URN, format!("urn:x:y:{origin}-{n}"))
            .with_u64(tags::SEQ, n),
    )
}

fn drain(s: &mut dyn EventStream) -> Vec<ManagementEvent> {
    let mut out = Vec::new();
    while let Some(d) = s.try_recv().unwrap() {
        s.ack(d.position).unwrap();
        out.push(d.event);
    }
    out
}

#[test]
fn every_subscriber_gets_one_copy() {
    let bus = Broker::in_memory();
    let mut subs: Vec<_> = (0..3)
        .map(|i| bus.subscribe(&format!("s{i}"), REG_REQ, false, None).unwrap())
        .collect();
    bus.publish(REG_REQ, &reg(1, "gw")).unwrap();
    for s in &mut subs {
        assert_eq!(drain(s.as_mut()), vec![reg(1, "gw")]);
    }
}

#[test]
fn wrong_topic_is_rejected() {
    let bus = Broker::in_memory();
    let err = bus.publish(MON_REQ, &reg(1, "gw")).unwrap_err();
    assert_eq!(
        err,
        BusError::TopicMismatch {
            event_type: NODE_REG_REQUEST.into(),
            expected: REG_REQ,
            got: MON_REQ
        }
    );
    let mut bogus = reg(1, "gw");
    bogus.event_type = "BOGUS".into();
    assert_eq!(
        bus.publish(REG_REQ, &bogus),
        Err(BusError::UnknownEventType("BOGUS".into()))
    );
}

#[test]
fn per_publisher_order_is_preserved() {
    let bus = Broker::in_memory();
    let mut sub = bus.subscribe("watcher", REG_REQ, true, None).unwrap();
    let handles: Vec<_> = (0..4)
        .map(|p| {
            let bus = bus.clone();
            thread::spawn(move || {
                for n in 0..250 {
                    bus.publish(REG_REQ, &reg(n, &format!("p{p}"))).unwrap();
                }
            })
        })
        .collect();
    let mut last: HashMap<String, u64> = HashMap::new();
    let mut got = 0;
    while got < 1000 {
        let d = sub.recv_timeout(Duration::from_secs(5)).unwrap().expect("delivery");
        let urn = d.event.payload.str(tags::URN).unwrap().to_string();
        let publisher = urn.rsplit(':').next().unwrap().split('-').next().unwrap().to_string();
        let seq = d.event.payload.u64(tags::SEQ).unwrap();
        if let Some(prev) = last.insert(publisher, seq) {
            assert!(seq > prev, "publisher order broken");
        }
        sub.ack(d.position).unwrap();
        got += 1;
    }
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(last.len(), 4);
    assert!(last.values().all(|&s| s == 249));
}

#[test]
fn durable_subscriber_catches_up_after_disconnect() {
    let bus = Broker::in_memory();
    let sub = bus.subscribe("portal", REG_REQ, true, None).unwrap();
    drop(sub);
    for n in 0..5 {
        bus.publish(REG_REQ, &reg(n, "gw")).unwrap();
    }
    let mut sub = bus.subscribe("portal", REG_REQ, true, None).unwrap();
    let got = drain(sub.as_mut());
    assert_eq!(got, (0..5).map(|n| reg(n, "gw")).collect::<Vec<_>>());
}

#[test]
fn non_durable_subscriber_misses_events_while_away() {
    let bus = Broker::in_memory();
    drop(bus.subscribe("tmp", REG_REQ, false, None).unwrap());
    for n in 0..5 {
        bus.publish(REG_REQ, &reg(n, "gw")).unwrap();
    }
    let mut sub = bus.subscribe("tmp", REG_REQ, false, None).unwrap();
    assert!(drain(sub.as_mut()).is_empty());
}

#[test]
fn filter_limits_event_types() {
    let bus = Broker::in_memory();
    let filter: BTreeSet<String> = [GW_REG_REQUEST.to_string()].into();
    let mut sub = bus.subscribe("gws", REG_REQ, false, Some(filter)).unwrap();
    bus.publish(REG_REQ, &reg(1, "gw")).unwrap();
    let mut gw = reg(2, "gw");
    gw.event_type = GW_REG_REQUEST.into();
    bus.publish(REG_REQ, &gw).unwrap();
    let got = drain(sub.as_mut());
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].event_type, GW_REG_REQUEST);
}

#[test]
fn unacked_events_are_redelivered_and_dedup_makes_them_exactly_once() {
    let bus = Broker::in_memory();
    let mut sub = bus.subscribe("c", REG_REQ, true, None).unwrap();
    for n in 0..10 {
        bus.publish(REG_REQ, &reg(n, "gw")).unwrap();
    }
    let mut dedup = Dedup::new();
    let mut processed = Vec::new();
    // Process 6, acknowledge only the first 3, then crash.
    for i in 0..6 {
        let d = sub.try_recv().unwrap().unwrap();
        if dedup.first_time(&d.event) {
            processed.push(d.event.payload.u64(tags::SEQ).unwrap());
        }
        if i < 3 {
            sub.ack(d.position).unwrap();
        }
    }
    drop(sub);
    let mut sub = bus.subscribe("c", REG_REQ, true, None).unwrap();
    let mut redelivered = 0;
    while let Some(d) = sub.try_recv().unwrap() {
        if dedup.first_time(&d.event) {
            processed.push(d.event.payload.u64(tags::SEQ).unwrap());
        } else {
            redelivered += 1;
        }
        sub.ack(d.position).unwrap();
    }
    assert_eq!(redelivered, 3);
    assert_eq!(processed, (0..10).collect::<Vec<_>>());
}

#[test]
fn outage_rejects_publishes() {
    let bus = Broker::in_memory();
    bus.set_available(false);
    assert_eq!(bus.publish(REG_REQ, &reg(1, "gw")), Err(BusError::Unavailable));
    bus.set_available(true);
    bus.publish(REG_REQ, &reg(1, "gw")).unwrap();
    assert_eq!(bus.count(NODE_REG_REQUEST), 1);
}

#[test]
fn restart_keeps_durable_backlog() {
    let dir = tempfile::tempdir().unwrap();
    {
        let bus = Broker::open(dir.path()).unwrap();
        let mut sub = bus.subscribe("portal", REG_REQ, true, None).unwrap();
        for n in 0..4 {
            bus.publish(REG_REQ, &reg(n, "gw")).unwrap();
        }
        // Consume two, leave two in the backlog.
        for _ in 0..2 {
            let d = sub.try_recv().unwrap().unwrap();
            sub.ack(d.position).unwrap();
        }
        drop(sub);
        for n in 4..7 {
            bus.publish(REG_REQ, &reg(n, "gw")).unwrap();
        }
    }
    let bus = Broker::open(dir.path()).unwrap();
    assert_eq!(bus.topic_len(REG_REQ), 7);
    let mut sub = bus.subscribe("portal", REG_REQ, true, None).unwrap();
    let got: Vec<u64> = drain(sub.as_mut())
        .iter()
        .map(|e| e.payload.u64(tags::SEQ).unwrap())
        .collect();
    assert_eq!(got, vec![2, 3, 4, 5, 6]);
    // Global order survives the restart too.
    let seqs: Vec<u64> = bus.audit_log().iter().map(|e| e.global_seq).collect();
    assert_eq!(seqs, (0..7).collect::<Vec<_>>());
    let next = bus.publish(REG_REQ, &reg(7, "gw")).unwrap();
    assert_eq!(next, 7);
}

#[test]
fn requests_and_replies_share_correlation_ids() {
    let req = reg(3, "gw");
    let rep = req
        .reply(SimTime(9), Payload::new().with_bool(tags::OK, true))
        .unwrap();
    assert_eq!(rep.event_type, NODE_REG_REPLY);
    assert_eq!(rep.correlation_id, req.correlation_id);
    assert_eq!(rep.topic(), Some(Topic::new(Channel::Registration, Kind::Reply)));
    assert!(registry::lookup(&rep.event_type).is_some());
}

#[test]
fn tcp_transport_matches_in_process_behaviour() {
    let broker = Broker::in_memory();
    let server = BusServer::bind("127.0.0.1:0", broker.clone()).unwrap();
    let remote = RemoteBus::connect(server.local_addr()).unwrap();
    let mut sub = remote.subscribe("far", REG_REQ, true, None).unwrap();
    for n in 0..20 {
        remote.publish(REG_REQ, &reg(n, "remote")).unwrap();
    }
    assert!(matches!(
        remote.publish(MON_REQ, &reg(1, "x")),
        Err(BusError::TopicMismatch { .. })
    ));
    let mut got = Vec::new();
    while got.len() < 20 {
        let d = sub.recv_timeout(Duration::from_secs(5)).unwrap().expect("delivery");
        sub.ack(d.position).unwrap();
        got.push(d.event);
    }
    assert_eq!(got, (0..20).map(|n| reg(n, "remote")).collect::<Vec<_>>());
    // Acks travel back to the broker.
    let deadline = std::time::Instant::now() + Duration::from_secs(5);
    while broker.backlog("far", REG_REQ) != Some(0) {
        assert!(std::time::Instant::now() < deadline, "acks never arrived");
        thread::sleep(Duration::from_millis(10));
    }
    drop(sub);
    broker.set_available(false);
    assert_eq!(remote.publish(REG_REQ, &reg(99, "r")), Err(BusError::Unavailable));
}
