mod common;

use std::path::Path;

use common::Api;
use reqwest::StatusCode;
use serde_json::{json, Value};
use subjektiv_core::clock::ClockMode;
use subjektiv_core::engine::{to_jsonl, TraceRecord};
use subjektiv_core::patterns;
use subjektiv_core::pdl;
use subjektiv_node::cluster::LocalNodes;
use subjektiv_node::config::{Address, NodeConfig};
use subjektiv_node::server::{serve, Running};
use subjektiv_node::store::Store;
use uuid::Uuid;

fn node() -> (LocalNodes, Api) {
    let nodes = LocalNodes::start(&["a"]).unwrap();
    let api = Api::new(&nodes.urls()[0]);
    (nodes, api)
}

fn upload(api: &Api, case: &str) -> String {
    let case = patterns::case(case).unwrap();
    let (status, body) = api.post_text("/processes", &case.source);
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["name"].as_str().unwrap().to_string()
}

fn start(api: &Api, process: &str, starters: Value) -> Uuid {
    let (status, body) = api.post(
        "/instances",
        json!({"process": process, "starters": starters}),
    );
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["instance"].as_str().unwrap().parse().unwrap()
}

fn tasks(api: &Api) -> Vec<Value> {
    let (status, body) = api.get("/tasks");
    assert_eq!(status, StatusCode::OK);
    body.as_array().unwrap().clone()
}

fn task_of<'a>(tasks: &'a [Value], agent: &str) -> &'a Value {
    tasks
        .iter()
        .find(|t| t["agent"] == agent)
        .unwrap_or_else(|| panic!("no task for {agent} in {tasks:?}"))
}

fn complete(api: &Api, task: &Value, choice: Value) -> (StatusCode, Value) {
    let id = task["id"].as_str().unwrap();
    api.post(&format!("/tasks/{id}/complete"), json!({"choice": choice}))
}

#[test]
fn fresh_node_has_no_tasks() {
    let (_nodes, api) = node();
    assert!(tasks(&api).is_empty());
    let (status, health) = api.get("/health");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(health["company"], "a");
}

#[test]
fn uploaded_definitions_are_listed_and_served_canonically() {
    let (_nodes, api) = node();
    let name = upload(&api, "send_receive");
    let (_, list) = api.get("/processes");
    assert_eq!(list[0]["name"], name.as_str());
    let (status, one) = api.get(&format!("/processes/{name}"));
    assert_eq!(status, StatusCode::OK);
    let source = one["source"].as_str().unwrap();
    let reparsed = pdl::parse(source).unwrap().into_valid().unwrap();
    assert_eq!(pdl::serialize(&reparsed), source);

    let wrapped = json!({"source": patterns::case("racing").unwrap().source});
    assert_eq!(api.post("/processes", wrapped).0, StatusCode::CREATED);
}

#[test]
fn invalid_definitions_are_refused_with_reasons() {
    let (_nodes, api) = node();
    let (status, body) = api.post_text(
        "/processes",
        "process P { subject X behavior X { start do a \"A\" on \"go\" -> a } }",
    );
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "INVALID_MODEL");
    let rules: Vec<&str> = body["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["rule"].as_str().unwrap())
        .collect();
    assert!(rules.contains(&"NO_END_STATE"), "{rules:?}");

    let (status, body) = api.post_text("/processes", "process {");
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "PARSE_ERROR");
}

#[test]
fn unknown_things_are_not_found() {
    let (_nodes, api) = node();
    let nobody = Uuid::new_v4();
    assert_eq!(api.get("/processes/Nope").0, StatusCode::NOT_FOUND);
    assert_eq!(
        api.get(&format!("/instances/{nobody}")).0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        api.get(&format!("/instances/{nobody}/trace")).0,
        StatusCode::NOT_FOUND
    );
    let (status, body) = api.post(
        &format!("/tasks/{nobody}/complete"),
        json!({"choice": {"branch": "x"}}),
    );
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "UNKNOWN_TASK");
    let (status, _) = api.post(
        "/instances",
        json!({"process": "Nope", "starters": {"X": 1}}),
    );
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[test]
fn tasks_complete_once() {
    let (_nodes, api) = node();
    let name = upload(&api, "send_receive");
    start(&api, &name, json!({"Customer": 1}));
    let open = tasks(&api);
    let fill = task_of(&open, "Customer#0");
    assert_eq!(fill["state"], "fill");

    let (status, body) = complete(&api, fill, json!({"branch": "No such branch"}));
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "INVALID_CHOICE");

    let (status, _) = complete(&api, fill, json!({"branch": "Order filled"}));
    assert_eq!(status, StatusCode::OK);
    let (status, body) = complete(&api, fill, json!({"branch": "Order filled"}));
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "STALE_TASK");
}

#[test]
fn an_expired_timer_makes_the_pick_task_stale() {
    let (_nodes, api) = node();
    let name = upload(&api, "multi_responses");
    start(&api, &name, json!({"Supplier": 1, "Recipient": 1}));
    let open = tasks(&api);
    let respond = task_of(&open, "Supplier#0");
    assert_eq!(
        complete(&api, respond, json!({"payload": {"value": 1}})).0,
        StatusCode::OK
    );

    let open = tasks(&api);
    let pick = task_of(&open, "Recipient#0").clone();
    assert_eq!(pick["kind"], "pick_message");

    assert_eq!(api.post("/clock", json!({"to": 5000})).0, StatusCode::OK);
    let (status, _) = api.post("/timers/fire", json!({}));
    assert_eq!(status, StatusCode::OK);
    let envelope = pick["options"]["pick_message"]["messages"][0]["envelope"].clone();
    let (status, body) = complete(&api, &pick, json!({"pick_message": envelope}));
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    assert!(tasks(&api).iter().all(|t| t["agent"] != "Recipient#0"));
}

#[test]
fn listed_tasks_match_the_host() {
    let (nodes, api) = node();
    let name = upload(&api, "atomic_multicast");
    start(&api, &name, json!({"Customer": 1}));
    let open = tasks(&api);
    complete(
        &api,
        task_of(&open, "Customer#0"),
        json!({"branch": "Created"}),
    );
    let open = tasks(&api);
    complete(
        &api,
        task_of(&open, "Customer#0"),
        json!({"send_targets": {"targets": ["Supplier#0", "Supplier#1", "Supplier#2"]}}),
    );

    let listed = tasks(&api);
    let direct = nodes.running()[0]
        .node
        .call_blocking(|h| h.tasks(&Default::default()));
    assert_eq!(
        listed,
        serde_json::to_value(direct)
            .unwrap()
            .as_array()
            .unwrap()
            .clone()
    );
    assert_eq!(listed.len(), 3);

    let (status, filtered) = api.get("/tasks?subject=Supplier");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(filtered.as_array().unwrap().len(), 3);
}

struct Served {
    rt: tokio::runtime::Runtime,
    running: Option<Running>,
}

impl Served {
    fn start(dir: &Path) -> Self {
        let mut cfg = NodeConfig::new("a", dir);
        cfg.listen = Address::new("127.0.0.1", 0);
        cfg.http = Address::new("127.0.0.1", 0);
        cfg.clock = ClockMode::Virtual;
        let rt = tokio::runtime::Runtime::new().unwrap();
        let running = rt.block_on(serve(&cfg)).unwrap();
        Self {
            rt,
            running: Some(running),
        }
    }

    fn api(&self) -> Api {
        Api::new(self.running.as_ref().unwrap().url())
    }

    fn skipped(&self) -> &[String] {
        &self.running.as_ref().unwrap().skipped
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _guard = self.rt.enter();
        self.running.take();
    }
}

#[test]
fn definitions_survive_a_restart_and_corrupt_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    {
        let served = Served::start(dir.path());
        upload(&served.api(), "send_receive");
    }
    std::fs::write(
        dir.path().join("processes").join("Broken.sbpm"),
        "process Broken {",
    )
    .unwrap();

    let served = Served::start(dir.path());
    assert_eq!(served.skipped().len(), 1, "{:?}", served.skipped());
    let (_, list) = served.api().get("/processes");
    let names: Vec<&str> = list
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, vec!["SendReceive"]);
}

#[test]
fn stored_files_are_canonical_and_run_logs_match_the_api() {
    let dir = tempfile::tempdir().unwrap();
    let served = Served::start(dir.path());
    let api = served.api();
    let name = upload(&api, "send_receive");
    let id = start(&api, &name, json!({"Customer": 1}));
    let open = tasks(&api);
    complete(
        &api,
        task_of(&open, "Customer#0"),
        json!({"branch": "Order filled"}),
    );
    let open = tasks(&api);
    complete(
        &api,
        task_of(&open, "Customer#0"),
        json!({"payload": {"item": "nails", "quantity": 3}}),
    );

    let store = Store::open(dir.path()).unwrap();
    let stored = std::fs::read_to_string(store.process_path(&name)).unwrap();
    let reparsed = pdl::parse(&stored).unwrap().into_valid().unwrap();
    assert_eq!(pdl::serialize(&reparsed), stored);

    let (_, trace) = api.get(&format!("/instances/{id}/trace"));
    let trace: Vec<TraceRecord> = serde_json::from_value(trace).unwrap();
    assert!(trace.len() >= 3);
    assert_eq!(store.read_trace(id).unwrap(), to_jsonl(&trace));

    let (_, tail) = api.get(&format!("/instances/{id}/trace?since=2"));
    assert_eq!(tail.as_array().unwrap().len(), trace.len() - 2);
}
