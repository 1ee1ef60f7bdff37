#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use subjektiv_core::bus::WireFrame;
use subjektiv_core::engine::{AgentRef, Envelope};
use subjektiv_core::patterns;
use subjektiv_node::cluster::{split_model, LocalNodes};
use uuid::Uuid;

pub struct Api {
    client: Client,
    pub base: String,
}

impl Api {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            client: Client::new(),
            base: base.into(),
        }
    }

    pub fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .unwrap();
        let status = r.status();
        (status, r.json().unwrap_or(Value::Null))
    }

    pub fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .json(&body)
            .send()
            .unwrap();
        let status = r.status();
        (status, r.json().unwrap_or(Value::Null))
    }

    pub fn post_text(&self, path: &str, body: &str) -> (StatusCode, Value) {
        let r = self
            .client
            .post(format!("{}{path}", self.base))
            .body(body.to_string())
            .send()
            .unwrap();
        let status = r.status();
        (status, r.json().unwrap_or(Value::Null))
    }
}

/// A line-oriented connection to a bus listener.
pub struct BusConn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl BusConn {
    pub fn connect(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(std::time::Duration::from_secs(5)))
            .unwrap();
        Self {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }

    pub fn send_line(&mut self, line: &str) -> WireFrame {
        self.writer.write_all(line.as_bytes()).unwrap();
        self.writer.write_all(b"\n").unwrap();
        let mut reply = String::new();
        self.reader.read_line(&mut reply).unwrap();
        WireFrame::decode(reply.trim_end()).expect("well-formed reply")
    }

    pub fn send(&mut self, e: &Envelope) -> WireFrame {
        self.send_line(&WireFrame::envelope(e.clone()).encode())
    }
}

pub fn envelope(process: &str, instance: Uuid, from: &str, to: &str, ty: &str) -> Envelope {
    Envelope {
        id: Uuid::new_v4(),
        process: process.into(),
        instance,
        from: from.parse::<AgentRef>().unwrap(),
        to: to.parse::<AgentRef>().unwrap(),
        message_type: ty.into(),
        payload: BTreeMap::new(),
        sent_at: 0,
        arrived_at: None,
    }
}

/// Counts of what node `b` recorded per envelope in the dedup scenario.
#[derive(Debug)]
pub struct DedupOutcome {
    pub insertions: BTreeMap<Uuid, usize>,
    pub duplicates: usize,
    pub pool_full: usize,
    pub retried_on_a: usize,
    pub pooled: Vec<Uuid>,
}

impl DedupOutcome {
    pub fn holds(&self) -> bool {
        self.insertions.values().all(|n| *n == 1)
            && self.insertions.len() == 2
            && self.duplicates >= 3
            && self.pool_full >= 1
            && self.retried_on_a >= 1
            && self.pooled.len() == 1
    }
}

/// Two nodes, `b` with room for one message per pool. Envelope one is
/// written to `b` by hand three times, once after it was consumed;
/// envelope two comes from `a`, bounces off the full pool, is retried
/// after the pool drains and is then replayed by hand as well.
pub fn dedup_scenario() -> Result<DedupOutcome, String> {
    let case = patterns::case("send_receive").map_err(|e| e.to_string())?;
    let model = split_model(&case.model, "a", "b");
    let nodes = LocalNodes::start_with(&["a", "b"], 1).map_err(|e| e.to_string())?;
    nodes.upload(&model)?;
    let urls = nodes.urls();
    let (a, b) = (Api::new(&urls[0]), Api::new(&urls[1]));
    let process = model.name.clone();

    let (status, started) = a.post(
        "/instances",
        json!({"process": process, "starters": {"Customer": 1}}),
    );
    if status != StatusCode::CREATED {
        return Err(format!("start: {status} {started}"));
    }
    let id: Uuid =
        serde_json::from_value(started["instance"].clone()).map_err(|e| e.to_string())?;

    let mut bus = BusConn::connect(nodes.running()[1].bus_addr);
    let e1 = envelope(&process, id, "Customer#0", "Supplier#0", "Order");
    for _ in 0..2 {
        let reply = bus.send(&e1);
        if reply.reference != Some(e1.id) || reply.reason.is_some() {
            return Err(format!("e1 not acked: {reply:?}"));
        }
    }

    let (status, body) = a.post(
        &format!("/instances/{id}/inject"),
        json!({"from": "Customer#0", "to": "Supplier#0", "type": "Order"}),
    );
    if status != StatusCode::OK {
        return Err(format!("inject: {status} {body}"));
    }
    bus.send(&e1);

    let (_, tasks) = b.get(&format!("/tasks?instance={id}"));
    let task = tasks
        .as_array()
        .and_then(|t| t.first())
        .ok_or("supplier has no task")?;
    let (status, body) = b.post(
        &format!(
            "/tasks/{}/complete",
            task["id"].as_str().unwrap_or_default()
        ),
        json!({"choice": {"pick_message": e1.id}}),
    );
    if status != StatusCode::OK {
        return Err(format!("pick: {status} {body}"));
    }
    bus.send(&e1);

    a.post("/clock", json!({"to": 1000}));
    a.post("/bus/flush", json!({}));
    let (_, view) = b.get(&format!("/instances/{id}"));
    let pooled: Vec<Uuid> = view["agents"]
        .as_array()
        .into_iter()
        .flatten()
        .filter(|ag| ag["agent"] == "Supplier#0")
        .flat_map(|ag| ag["pool"].as_array().cloned().unwrap_or_default())
        .filter_map(|p| p["id"].as_str().and_then(|s| s.parse().ok()))
        .collect();
    if let Some(e2) = pooled.first() {
        let mut again = envelope(&process, id, "Customer#0", "Supplier#0", "Order");
        again.id = *e2;
        bus.send(&again);
    }

    let (_, trace_b) = b.get(&format!("/instances/{id}/trace"));
    let (_, trace_a) = a.get(&format!("/instances/{id}/trace"));
    let records = |t: &Value, kind: &str| -> Vec<Value> {
        t.as_array()
            .into_iter()
            .flatten()
            .filter(|r| r["kind"] == kind)
            .cloned()
            .collect()
    };
    let mut insertions = BTreeMap::new();
    for r in records(&trace_b, "deliver") {
        if let Some(env) = r["detail"]["envelope"]
            .as_str()
            .and_then(|s| s.parse().ok())
        {
            *insertions.entry(env).or_insert(0) += 1;
        }
    }
    let (_, view) = b.get(&format!("/instances/{id}"));
    let pooled = view["agents"]
        .as_array()
        .into_iter()
        .flatten()
        .flat_map(|ag| ag["pool"].as_array().cloned().unwrap_or_default())
        .filter_map(|p| p["id"].as_str().and_then(|s| s.parse().ok()))
        .collect();
    Ok(DedupOutcome {
        insertions,
        duplicates: records(&trace_b, "duplicate").len(),
        pool_full: records(&trace_b, "reject").len(),
        retried_on_a: records(&trace_a, "retry").len(),
        pooled,
    })
}
