//! Driving one instance spread over several nodes through their HTTP APIs.
//!
//! Every subject lives on exactly one node. After each command the new
//! trace records are pulled from the node that executed it first and then
//! from the others, which reproduces the single-node order as long as one
//! command only causes effects one bus hop away.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use subjektiv_core::bus::Peer;
use subjektiv_core::clock::ClockMode;
use subjektiv_core::engine::{AgentStatus, Choice, RecordKind, TraceRecord, DEFAULT_POOL_CAPACITY};
use subjektiv_core::host::virtual_instance_id;
use subjektiv_core::model::ValidModel;
use subjektiv_core::patterns::{run_case_on, CaseError, CaseReport, PatternCase};
use subjektiv_core::pdl;
use subjektiv_core::tasks::{Cluster, DriverError, Injection, Snapshot, Task};
use uuid::Uuid;

use crate::config::{Address, NodeConfig};
use crate::server::{start, Listeners, Running};

type Result<T> = std::result::Result<T, DriverError>;

fn cluster_err(e: impl std::fmt::Display) -> DriverError {
    DriverError::Cluster(e.to_string())
}

struct Member {
    url: String,
    cursor: usize,
}

pub struct HttpCluster {
    client: reqwest::blocking::Client,
    members: Vec<Member>,
    process: String,
    placement: BTreeMap<String, usize>,
    instance: Option<Uuid>,
    instance_id: Uuid,
    merged: Vec<TraceRecord>,
    advances: BTreeSet<u64>,
}

#[derive(Deserialize)]
struct Health {
    company: Option<String>,
}

impl HttpCluster {
    /// Connects to nodes at `urls` (e.g. `http://127.0.0.1:8471`). Each
    /// subject of `model` is placed on the node of its company, untagged
    /// ones on the first node.
    pub fn connect(urls: &[String], model: &ValidModel) -> Result<Self> {
        if urls.is_empty() {
            return Err(cluster_err("no nodes"));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(cluster_err)?;
        let mut companies = Vec::new();
        for url in urls {
            let h: Health = client
                .get(format!("{url}/health"))
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json())
                .map_err(cluster_err)?;
            companies.push(h.company);
        }
        let placement = model
            .subjects
            .iter()
            .filter(|s| !s.is_external())
            .map(|s| {
                let at = s
                    .company
                    .as_ref()
                    .and_then(|c| companies.iter().position(|n| n.as_ref() == Some(c)))
                    .unwrap_or(0);
                (s.name.clone(), at)
            })
            .collect();
        Ok(Self {
            client,
            members: urls
                .iter()
                .map(|u| Member {
                    url: u.trim_end_matches('/').to_string(),
                    cursor: 0,
                })
                .collect(),
            process: model.name.clone(),
            placement,
            instance: None,
            instance_id: virtual_instance_id(&model.name, 1),
            merged: Vec::new(),
            advances: BTreeSet::new(),
        })
    }

    /// Uses `id` for the next started instance instead of the id a fresh
    /// single node would pick.
    pub fn with_instance_id(mut self, id: Uuid) -> Self {
        self.instance_id = id;
        self
    }

    fn node_of(&self, subject: &str) -> usize {
        self.placement.get(subject).copied().unwrap_or(0)
    }

    fn id(&self) -> Result<Uuid> {
        self.instance
            .ok_or_else(|| cluster_err("no instance started"))
    }

    /// `None` on 404.
    fn get<T: DeserializeOwned>(&self, node: usize, path: &str) -> Result<Option<T>> {
        let r = self
            .client
            .get(format!("{}{path}", self.members[node].url))
            .send()
            .map_err(cluster_err)?;
        if r.status() == reqwest::StatusCode::NOT_FOUND {
            return Ok(None);
        }
        let r = r.error_for_status().map_err(cluster_err)?;
        r.json().map(Some).map_err(cluster_err)
    }

    /// The parsed body on success, the error body as text otherwise.
    fn post(
        &self,
        node: usize,
        path: &str,
        body: &Value,
    ) -> Result<std::result::Result<Value, String>> {
        let r = self
            .client
            .post(format!("{}{path}", self.members[node].url))
            .json(body)
            .send()
            .map_err(cluster_err)?;
        if r.status().is_success() {
            Ok(Ok(r.json().map_err(cluster_err)?))
        } else {
            Ok(Err(r.text().unwrap_or_default()))
        }
    }

    fn post_ok(&self, node: usize, path: &str, body: &Value) -> Result<Value> {
        self.post(node, path, body)?.map_err(cluster_err)
    }

    /// Pulls new trace records, `first` node first.
    fn sync(&mut self, first: usize) -> Result<()> {
        let id = self.id()?;
        let order = std::iter::once(first).chain((0..self.members.len()).filter(|i| *i != first));
        for n in order.collect::<Vec<_>>() {
            let path = format!("/instances/{id}/trace?since={}", self.members[n].cursor);
            let Some(records) = self.get::<Vec<TraceRecord>>(n, &path)? else {
                continue;
            };
            self.members[n].cursor += records.len();
            for r in records {
                if r.kind == RecordKind::Advance {
                    let to = r.detail.get("to_ms").and_then(Value::as_u64).unwrap_or(0);
                    if !self.advances.insert(to) {
                        continue;
                    }
                }
                self.merged.push(r);
            }
        }
        Ok(())
    }

    fn each_post_sum(&mut self, path: &str, field: &str) -> Result<usize> {
        let mut total = 0;
        for n in 0..self.members.len() {
            let v = self.post_ok(n, path, &json!({}))?;
            total += v.get(field).and_then(Value::as_u64).unwrap_or(0) as usize;
        }
        self.sync(0)?;
        Ok(total)
    }
}

#[derive(Deserialize)]
struct InstanceState {
    statuses: BTreeMap<String, AgentStatus>,
    residue: BTreeMap<String, Vec<(String, String)>>,
}

#[derive(Deserialize)]
struct Timers {
    next_stop: Option<u64>,
}

#[derive(Deserialize)]
struct Clock {
    now: u64,
}

impl Cluster for HttpCluster {
    fn start(&mut self, starters: &BTreeMap<String, u32>) -> Result<Uuid> {
        let id = self.instance_id;
        let mut split: BTreeMap<usize, BTreeMap<String, u32>> = BTreeMap::new();
        for (s, n) in starters {
            split
                .entry(self.node_of(s))
                .or_default()
                .insert(s.clone(), *n);
        }
        if split.is_empty() {
            split.insert(0, BTreeMap::new());
        }
        for (node, starters) in split {
            let body = json!({"process": self.process, "starters": starters, "id": id});
            self.post(node, "/instances", &body)?
                .map_err(|e| cluster_err(format!("start on node {node}: {e}")))?;
        }
        self.instance = Some(id);
        self.sync(0)?;
        Ok(id)
    }

    fn now(&mut self) -> Result<u64> {
        Ok(self
            .get::<Clock>(0, "/clock")?
            .ok_or_else(|| cluster_err("no clock"))?
            .now)
    }

    fn tasks(&mut self) -> Result<Vec<Task>> {
        let id = self.id()?;
        let mut all = Vec::new();
        for n in 0..self.members.len() {
            let tasks: Vec<Task> = self
                .get(n, &format!("/tasks?instance={id}"))?
                .unwrap_or_default();
            all.extend(tasks);
        }
        all.sort_by(|a, b| (a.created_at, &a.agent).cmp(&(b.created_at, &b.agent)));
        Ok(all)
    }

    fn complete(&mut self, task: &Task, choice: Choice) -> Result<()> {
        let node = self.node_of(&task.agent.subject);
        let body = json!({ "choice": choice });
        let reply = self.post(node, &format!("/tasks/{}/complete", task.id), &body)?;
        reply.map_err(|reason| DriverError::Rejected {
            agent: task.agent.to_string(),
            state: task.state.clone(),
            reason,
        })?;
        self.sync(node)
    }

    fn fire_due_timers(&mut self) -> Result<usize> {
        self.each_post_sum("/timers/fire", "fired")
    }

    fn flush_retries(&mut self) -> Result<usize> {
        self.each_post_sum("/bus/flush", "flushed")
    }

    fn advance_to(&mut self, to: u64) -> Result<()> {
        for n in 0..self.members.len() {
            self.post_ok(n, "/clock", &json!({ "to": to }))?;
        }
        self.sync(0)
    }

    fn next_stop(&mut self) -> Result<Option<u64>> {
        let mut next: Option<u64> = None;
        for n in 0..self.members.len() {
            if let Some(t) = self.get::<Timers>(n, "/timers")?.and_then(|t| t.next_stop) {
                next = Some(next.map_or(t, |m| m.min(t)));
            }
        }
        Ok(next)
    }

    fn inject(&mut self, i: &Injection) -> Result<()> {
        let id = self.id()?;
        let node = self.node_of(&i.to.subject);
        let body =
            json!({"from": i.from, "to": i.to, "type": i.message_type, "payload": i.payload});
        self.post_ok(node, &format!("/instances/{id}/inject"), &body)?;
        self.sync(node)
    }

    fn snapshot(&mut self) -> Result<Snapshot> {
        let id = self.id()?;
        self.sync(0)?;
        let mut statuses = BTreeMap::new();
        let mut residue = BTreeMap::new();
        for n in 0..self.members.len() {
            if let Some(s) = self.get::<InstanceState>(n, &format!("/instances/{id}"))? {
                statuses.extend(s.statuses);
                residue.extend(s.residue);
            }
        }
        let trace = self
            .merged
            .iter()
            .enumerate()
            .map(|(i, r)| TraceRecord {
                seq: i as u64 + 1,
                ..r.clone()
            })
            .collect();
        Ok(Snapshot {
            trace,
            statuses,
            residue,
        })
    }
}

/// The model with its first internal subject placed at `first` and every
/// other internal subject at `rest`.
pub fn split_model(model: &ValidModel, first: &str, rest: &str) -> ValidModel {
    let mut m = model.model().clone();
    let mut seen_first = false;
    for s in m.subjects.iter_mut().filter(|s| !s.is_external()) {
        s.company = Some(if seen_first { rest } else { first }.to_string());
        seen_first = true;
    }
    m.into_valid().expect("placement keeps a model valid")
}

/// Nodes running in this process on loopback ports, each with its own
/// virtual clock and a scratch store.
pub struct LocalNodes {
    runtime: tokio::runtime::Runtime,
    running: Vec<Running>,
    dirs: Vec<PathBuf>,
}

impl LocalNodes {
    /// One node per company, each peered with all the others.
    pub fn start(companies: &[&str]) -> std::io::Result<Self> {
        Self::start_with(companies, DEFAULT_POOL_CAPACITY)
    }

    /// Like [`LocalNodes::start`] with input pools of `pool_capacity`.
    pub fn start_with(companies: &[&str], pool_capacity: usize) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let mut dirs = Vec::new();
        let mut configs = Vec::new();
        for c in companies {
            let dir = std::env::temp_dir().join(format!("subjektiv-{c}-{}", Uuid::new_v4()));
            let mut cfg = NodeConfig::new(*c, &dir);
            cfg.listen = Address::new("127.0.0.1", 0);
            cfg.http = Address::new("127.0.0.1", 0);
            cfg.clock = ClockMode::Virtual;
            cfg.pool_capacity = pool_capacity;
            configs.push(cfg);
            dirs.push(dir);
        }
        let running = runtime.block_on(async {
            let mut bound = Vec::new();
            for cfg in &configs {
                bound.push(Listeners::bind(cfg).await?);
            }
            let addrs: Vec<u16> = bound.iter().map(|l| l.bus_addr().port()).collect();
            let mut running = Vec::new();
            for (i, (cfg, listeners)) in configs.iter_mut().zip(bound).enumerate() {
                cfg.peers = companies
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(j, c)| Peer {
                        company: c.to_string(),
                        host: "127.0.0.1".into(),
                        port: addrs[j],
                    })
                    .collect();
                let r = start(cfg, listeners)
                    .await
                    .map_err(|e| std::io::Error::other(e.to_string()))?;
                running.push(r);
            }
            Ok::<_, std::io::Error>(running)
        })?;
        Ok(Self {
            runtime,
            running,
            dirs,
        })
    }

    pub fn urls(&self) -> Vec<String> {
        self.running.iter().map(|r| r.url()).collect()
    }

    pub fn running(&self) -> &[Running] {
        &self.running
    }

    pub fn runtime(&self) -> &tokio::runtime::Runtime {
        &self.runtime
    }

    /// Uploads `model` to every node.
    pub fn upload(&self, model: &ValidModel) -> std::result::Result<(), String> {
        let source = pdl::serialize(model);
        let client = reqwest::blocking::Client::new();
        for url in self.urls() {
            let r = client
                .post(format!("{url}/processes"))
                .body(source.clone())
                .send()
                .map_err(|e| e.to_string())?;
            if !r.status().is_success() {
                return Err(r.text().unwrap_or_default());
            }
        }
        Ok(())
    }
}

impl Drop for LocalNodes {
    fn drop(&mut self) {
        let _guard = self.runtime.enter();
        self.running.clear();
        for d in &self.dirs {
            let _ = std::fs::remove_dir_all(d);
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DistributedError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error("cluster setup failed: {0}")]
    Setup(String),
}

/// Runs a corpus case over two fresh local nodes: the first subject on
/// company `a`, the rest on `b`.
pub fn run_case_distributed(
    case: &PatternCase,
) -> std::result::Result<CaseReport, DistributedError> {
    let model = split_model(&case.model, "a", "b");
    let nodes =
        LocalNodes::start(&["a", "b"]).map_err(|e| DistributedError::Setup(e.to_string()))?;
    nodes.upload(&model).map_err(DistributedError::Setup)?;
    run_case_on_nodes(case, &nodes.urls(), &model)
}

/// Runs a case against already running nodes that know `model`.
pub fn run_case_on_nodes(
    case: &PatternCase,
    urls: &[String],
    model: &ValidModel,
) -> std::result::Result<CaseReport, DistributedError> {
    let mut cluster =
        HttpCluster::connect(urls, model).map_err(|e| DistributedError::Setup(e.to_string()))?;
    Ok(run_case_on(case, &mut cluster)?)
}
