mod common;

use std::sync::Arc;
use std::time::Duration;

use citytb_bus::registry::{HELLO, NODE_REG_REPLY};
use citytb_bus::tcp::{BusServer, RemoteBus};
use citytb_bus::{Broker, EventBus};
use citytb_core::NodeState;
use citytb_mgmt::{AgentConfig, Timeouts};
use citytb_sim::World;
use common::{seed, Plane};

#[test]
fn agents_work_over_the_tcp_bus() {
    let broker = Broker::in_memory();
    let server = BusServer::bind("127.0.0.1:0", broker.clone()).unwrap();
    let remote: Arc<dyn EventBus> = Arc::new(RemoteBus::connect(server.local_addr()).unwrap());
    let world = World::parse(&seed("small.topo")).unwrap();
    let mut p = Plane::assemble(world, broker, remote, AgentConfig::default(), Timeouts::default());
    let deadline = std::time::Instant::now() + Duration::from_secs(30);
    while !p.all_registered() && std::time::Instant::now() < deadline {
        p.step();
        // Replies cross a socket; give them a moment before the next tick.
        std::thread::sleep(Duration::from_millis(1));
        p.settle();
    }
    assert!(p.all_registered(), "{} registered", p.registered());
    assert_eq!(p.broker.count(NODE_REG_REPLY), 20);
    p.run_for(Duration::from_secs(60));
    assert!(p.broker.count(HELLO) >= 2);
    assert_eq!(p.state("gw01"), Some(NodeState::Active));
    assert!(p.agents.iter().all(|a| a.buffered() == 0));
}
