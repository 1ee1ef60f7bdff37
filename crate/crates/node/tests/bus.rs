mod common;

use common::{dedup_scenario, envelope, Api, BusConn};
use serde_json::json;
use subjektiv_core::bus::Peer;
use subjektiv_core::bus::{FrameKind, NackReason};
use subjektiv_core::clock::ClockMode;
use subjektiv_core::engine::Choice;
use subjektiv_core::patterns;
use subjektiv_core::tasks::{Task, TaskOptions};
use subjektiv_node::cluster::{split_model, LocalNodes};
use subjektiv_node::config::{Address, NodeConfig};
use subjektiv_node::server::serve;
use uuid::Uuid;

fn two_nodes() -> (LocalNodes, String, Uuid) {
    let case = patterns::case("send_receive").unwrap();
    let model = split_model(&case.model, "a", "b");
    let nodes = LocalNodes::start(&["a", "b"]).unwrap();
    nodes.upload(&model).unwrap();
    let a = Api::new(&nodes.urls()[0]);
    let (_, started) = a.post(
        "/instances",
        json!({"process": model.name, "starters": {"Customer": 1}}),
    );
    let id = started["instance"].as_str().unwrap().parse().unwrap();
    (nodes, model.name.clone(), id)
}

#[test]
fn valid_frame_is_acked() {
    let (nodes, process, id) = two_nodes();
    let mut bus = BusConn::connect(nodes.running()[1].bus_addr);
    let e = envelope(&process, id, "Customer#0", "Supplier#0", "Order");
    let reply = bus.send(&e);
    assert_eq!(reply.kind, FrameKind::Ack);
    assert_eq!(reply.reference, Some(e.id));
}

#[test]
fn malformed_lines_are_refused_and_the_connection_survives() {
    let (nodes, process, id) = two_nodes();
    let mut bus = BusConn::connect(nodes.running()[1].bus_addr);
    let reply = bus.send_line("this is not json");
    assert_eq!(reply.kind, FrameKind::Nack);
    assert_eq!(reply.reason, Some(NackReason::BadFrame));

    let e = envelope(&process, id, "Customer#0", "Supplier#0", "Order");
    let mut frame =
        serde_json::to_value(subjektiv_core::bus::WireFrame::envelope(e.clone())).unwrap();
    frame["v"] = json!(2);
    let reply = bus.send_line(&frame.to_string());
    assert_eq!(reply.reason, Some(NackReason::BadFrame));
    assert_eq!(reply.reference, Some(e.id));

    let reply =
        bus.send_line(r#"{"v":1,"kind":"ack","ref":"00000000-0000-0000-0000-000000000000"}"#);
    assert_eq!(reply.reason, Some(NackReason::BadFrame));

    assert_eq!(bus.send(&e).kind, FrameKind::Ack);
}

#[test]
fn misrouted_envelopes_are_refused() {
    let (nodes, process, id) = two_nodes();
    let mut bus = BusConn::connect(nodes.running()[1].bus_addr);
    let to_customer = envelope(&process, id, "Supplier#0", "Customer#0", "Confirmation");
    assert_eq!(
        bus.send(&to_customer).reason,
        Some(NackReason::UnknownSubject)
    );
    let unknown = envelope("NoSuchProcess", id, "Customer#0", "Supplier#0", "Order");
    assert_eq!(bus.send(&unknown).reason, Some(NackReason::UnknownProcess));
}

#[test]
fn duplicates_and_retries_never_insert_twice() {
    let outcome = dedup_scenario().unwrap();
    assert!(outcome.holds(), "{outcome:#?}");
}

fn first_choice(task: &Task) -> Choice {
    match &task.options {
        TaskOptions::Branch { labels } => Choice::Branch(labels[0].clone()),
        TaskOptions::SendTargets { arms } => Choice::SendTargets {
            targets: vec![arms[0].eligible[0].clone()],
            payload: Default::default(),
        },
        TaskOptions::Payload { .. } => Choice::Payload(Default::default()),
        TaskOptions::PickMessage { messages } => Choice::PickMessage(messages[0].envelope),
    }
}

#[test]
fn unreachable_peer_ends_in_a_dead_letter() {
    let dead_port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = NodeConfig::new("a", dir.path());
    cfg.listen = Address::new("127.0.0.1", 0);
    cfg.http = Address::new("127.0.0.1", 0);
    cfg.clock = ClockMode::Virtual;
    cfg.peers = vec![Peer {
        company: "b".into(),
        host: "127.0.0.1".into(),
        port: dead_port,
    }];
    let model = split_model(&patterns::case("send_receive").unwrap().model, "a", "b");

    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let running = serve(&cfg).await.unwrap();
        let node = running.node.clone();
        let m = model.clone();
        node.call(move |h| h.register(m)).await;
        let starters = [("Customer".to_string(), 1)].into_iter().collect();
        let name = model.name.clone();
        node.call(move |h| h.start(&name, &starters, None))
            .await
            .unwrap();
        loop {
            let tasks = node.call(|h| h.tasks(&Default::default())).await;
            let Some(task) = tasks.first().cloned() else {
                break;
            };
            let out = node
                .call(move |h| h.complete(task.id, first_choice(&task)))
                .await
                .unwrap();
            let sent = !out.is_empty();
            node.dispatch(out).await;
            if sent {
                break;
            }
        }
        for step in 1..=10 {
            node.call(move |h| h.advance_to(step * 1000)).await.unwrap();
            node.tick().await;
        }
        let dead = node.call(|h| h.dead_letters().to_vec()).await;
        assert_eq!(dead.len(), 1, "{dead:?}");
        assert_eq!(dead[0].attempts, 5);
        assert_eq!(dead[0].reason, "CONNECTION_FAILED");
        assert!(node.call(|h| h.pending_retries()).await.is_empty());
    });
}
