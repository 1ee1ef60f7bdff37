//! The HTTP surface used by task inboxes, monitors and remote drivers.

use std::collections::BTreeMap;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use subjektiv_core::bus::NackReason;
use subjektiv_core::clock::ClockMode;
use subjektiv_core::engine::{AgentRef, AgentStatus, Choice, Engine, Record, TraceRecord};
use subjektiv_core::host::HostError;
use subjektiv_core::model::{SubjectKind, Violation};
use subjektiv_core::pdl;
use subjektiv_core::tasks::{Task, TaskError, TaskFilter};
use uuid::Uuid;

use crate::node::{Node, RegisterError};

pub const TRACE_TAIL: usize = 50;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    violations: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
            violations: Vec::new(),
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NOT_FOUND", what)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({"error": self.code, "message": self.message});
        if !self.violations.is_empty() {
            body["violations"] = json!(self.violations);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<HostError> for ApiError {
    fn from(e: HostError) -> Self {
        let status = match &e {
            HostError::UnknownProcess(_) | HostError::UnknownInstance(_) => StatusCode::NOT_FOUND,
            HostError::Task(TaskError::UnknownTask(_)) => StatusCode::NOT_FOUND,
            HostError::Task(TaskError::StaleTask(_)) => StatusCode::CONFLICT,
            HostError::DuplicateInstance(_) => StatusCode::CONFLICT,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<RegisterError> for ApiError {
    fn from(e: RegisterError) -> Self {
        match e {
            RegisterError::Parse(m) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "PARSE_ERROR", m)
            }
            RegisterError::Invalid(report) => Self {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                code: "INVALID_MODEL".into(),
                message: "model does not validate".into(),
                violations: report.violations,
            },
            RegisterError::Io(m) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "STORE", m),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(node: Node) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/processes", get(list_processes).post(upload_process))
        .route("/processes/{name}", get(get_process))
        .route("/instances", get(list_instances).post(start_instance))
        .route("/instances/{id}", get(get_instance))
        .route("/instances/{id}/trace", get(get_trace))
        .route("/instances/{id}/inject", post(inject))
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}/complete", post(complete_task))
        .route("/clock", get(get_clock).post(set_clock))
        .route("/timers", get(list_timers))
        .route("/timers/fire", post(fire_timers))
        .route("/bus", get(bus_status))
        .route("/bus/flush", post(flush_bus))
        .route("/bus/frame", post(bus_frame))
        .with_state(node)
}

async fn health(State(node): State<Node>) -> Json<Value> {
    let (now, mode, processes, instances) = node
        .call(|h| {
            (
                h.now(),
                h.config().clock,
                h.processes().count(),
                h.instances().count(),
            )
        })
        .await;
    Json(json!({
        "status": "ok",
        "company": node.company(),
        "now": now,
        "clock": mode,
        "processes": processes,
        "instances": instances,
    }))
}

#[derive(Serialize)]
struct SubjectView {
    name: String,
    kind: SubjectKind,
    max_instances: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    company: Option<String>,
}

#[derive(Serialize)]
struct ProcessView {
    name: String,
    subjects: Vec<SubjectView>,
    messages: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source: Option<String>,
}

fn process_view(m: &subjektiv_core::model::ValidModel, with_source: bool) -> ProcessView {
    ProcessView {
        name: m.name.clone(),
        subjects: m
            .subjects
            .iter()
            .map(|s| SubjectView {
                name: s.name.clone(),
                kind: s.kind,
                max_instances: s.max_instances,
                company: s.company.clone(),
            })
            .collect(),
        messages: m.message_types.iter().map(|t| t.name.clone()).collect(),
        source: with_source.then(|| pdl::serialize(m)),
    }
}

async fn list_processes(State(node): State<Node>) -> Json<Vec<ProcessView>> {
    Json(
        node.call(|h| h.processes().map(|m| process_view(m, false)).collect())
            .await,
    )
}

async fn get_process(
    State(node): State<Node>,
    Path(name): Path<String>,
) -> ApiResult<Json<ProcessView>> {
    node.call(move |h| h.process(&name).map(|m| process_view(m, true)))
        .await
        .map(Json)
        .ok_or_else(|| ApiError::not_found("no such process"))
}

/// Accepts raw `.sbpm` text or `{"source": "..."}`.
async fn upload_process(
    State(node): State<Node>,
    body: String,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let source = match serde_json::from_str::<Value>(&body) {
        Ok(Value::Object(o)) => match o.get("source").and_then(Value::as_str) {
            Some(s) => s.to_string(),
            None => {
                return Err(ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    "BAD_REQUEST",
                    "expected a `source` string",
                ))
            }
        },
        _ => body,
    };
    let model = node.register_source(&source).await?;
    let warnings: Vec<String> = model
        .warnings()
        .violations
        .iter()
        .map(|v| v.to_string())
        .collect();
    Ok((
        StatusCode::CREATED,
        Json(json!({"name": model.name, "warnings": warnings})),
    ))
}

#[derive(Deserialize)]
struct StartRequest {
    process: String,
    #[serde(default)]
    starters: BTreeMap<String, u32>,
    #[serde(default)]
    id: Option<Uuid>,
}

async fn start_instance(
    State(node): State<Node>,
    Json(req): Json<StartRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let id = node
        .call(move |h| h.start(&req.process, &req.starters, req.id))
        .await?;
    Ok((StatusCode::CREATED, Json(json!({"instance": id}))))
}

#[derive(Serialize)]
struct PoolEntryView {
    id: Uuid,
    #[serde(rename = "type")]
    message_type: String,
    from: AgentRef,
    arrived_at: Option<u64>,
}

#[derive(Serialize)]
struct AgentView {
    agent: AgentRef,
    state: String,
    label: String,
    status: AgentStatus,
    occurrence: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    timer: Option<Value>,
    pool: Vec<PoolEntryView>,
    variables: Record,
}

#[derive(Serialize)]
struct InstanceView {
    instance: Uuid,
    process: String,
    now: u64,
    agents: Vec<AgentView>,
    statuses: BTreeMap<String, AgentStatus>,
    residue: BTreeMap<String, Vec<(String, String)>>,
    trace_len: usize,
    trace_tail: Vec<TraceRecord>,
}

fn instance_view(e: &Engine) -> InstanceView {
    let model = e.model();
    let agents = e
        .agents()
        .map(|a| AgentView {
            agent: a.agent_ref(),
            state: a.current_state.clone(),
            label: model
                .behavior(&a.agent.subject)
                .and_then(|b| b.state(&a.current_state))
                .map(|s| s.label.clone())
                .unwrap_or_default(),
            status: a.status,
            occurrence: a.occurrence,
            timer: a
                .timer
                .as_ref()
                .map(|t| json!({"state": t.state, "fire_at": t.fire_at})),
            pool: a
                .pool
                .entries
                .iter()
                .map(|p| PoolEntryView {
                    id: p.id,
                    message_type: p.message_type.clone(),
                    from: p.from.clone(),
                    arrived_at: p.arrived_at,
                })
                .collect(),
            variables: a.variables.clone(),
        })
        .collect();
    let trace = e.trace();
    InstanceView {
        instance: e.instance(),
        process: model.name.clone(),
        now: e.now(),
        agents,
        statuses: e.statuses(),
        residue: e.residue(),
        trace_len: trace.len(),
        trace_tail: trace[trace.len().saturating_sub(TRACE_TAIL)..].to_vec(),
    }
}

async fn list_instances(State(node): State<Node>) -> Json<Value> {
    let list = node
        .call(|h| {
            h.instances()
                .map(|e| {
                    let done = e.agents().all(|a| a.status == AgentStatus::Completed);
                    json!({"instance": e.instance(), "process": e.model().name, "completed": done})
                })
                .collect::<Vec<_>>()
        })
        .await;
    Json(json!(list))
}

async fn get_instance(
    State(node): State<Node>,
    Path(id): Path<Uuid>,
) -> ApiResult<Json<InstanceView>> {
    node.call(move |h| h.instance(id).map(instance_view))
        .await
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no instance {id}")))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: usize,
}

async fn get_trace(
    State(node): State<Node>,
    Path(id): Path<Uuid>,
    Query(q): Query<Since>,
) -> ApiResult<Json<Vec<TraceRecord>>> {
    node.call(move |h| {
        h.instance(id)
            .map(|e| e.trace().get(q.since..).unwrap_or_default().to_vec())
    })
    .await
    .map(Json)
    .ok_or_else(|| ApiError::not_found(format!("no instance {id}")))
}

#[derive(Deserialize)]
struct InjectRequest {
    from: AgentRef,
    to: AgentRef,
    #[serde(rename = "type")]
    message_type: String,
    #[serde(default)]
    payload: Record,
}

async fn inject(
    State(node): State<Node>,
    Path(id): Path<Uuid>,
    Json(req): Json<InjectRequest>,
) -> ApiResult<Json<Value>> {
    let out = node
        .call(move |h| h.inject(id, req.from, req.to, &req.message_type, req.payload))
        .await?;
    let forwarded = out.len();
    node.dispatch(out).await;
    Ok(Json(json!({"forwarded": forwarded})))
}

async fn list_tasks(State(node): State<Node>, Query(filter): Query<TaskFilter>) -> Json<Vec<Task>> {
    Json(node.call(move |h| h.tasks(&filter)).await)
}

#[derive(Deserialize)]
struct CompleteRequest {
    choice: Choice,
}

async fn complete_task(
    State(node): State<Node>,
    Path(id): Path<Uuid>,
    Json(req): Json<CompleteRequest>,
) -> ApiResult<Json<Value>> {
    let out = node.call(move |h| h.complete(id, req.choice)).await?;
    let forwarded = out.len();
    node.dispatch(out).await;
    Ok(Json(
        json!({"task": id, "status": "completed", "forwarded": forwarded}),
    ))
}

async fn get_clock(State(node): State<Node>) -> Json<Value> {
    let (now, mode) = node.call(|h| (h.now(), h.config().clock)).await;
    Json(json!({"now": now, "mode": mode}))
}

#[derive(Deserialize)]
struct ClockRequest {
    to: u64,
}

async fn set_clock(
    State(node): State<Node>,
    Json(req): Json<ClockRequest>,
) -> ApiResult<Json<Value>> {
    let now = node
        .call(move |h| h.advance_to(req.to).map(|_| h.now()))
        .await?;
    Ok(Json(json!({"now": now, "mode": ClockMode::Virtual})))
}

async fn list_timers(State(node): State<Node>) -> Json<Value> {
    let (timers, next) = node
        .call(|h| {
            let timers: Vec<Value> = h
                .instances()
                .flat_map(|e| {
                    let id = e.instance();
                    e.pending_timers().into_iter().map(move |(at, agent, state)| {
                        json!({"instance": id, "agent": agent, "state": state, "fire_at": at})
                    })
                })
                .collect();
            (timers, h.next_stop())
        })
        .await;
    Json(json!({"timers": timers, "next_stop": next}))
}

async fn fire_timers(State(node): State<Node>) -> Json<Value> {
    let fired = node.call(|h| h.fire_due_timers()).await;
    Json(json!({"fired": fired}))
}

async fn bus_status(State(node): State<Node>) -> Json<Value> {
    let (retries, dead) = node
        .call(|h| (h.pending_retries(), h.dead_letters().to_vec()))
        .await;
    Json(json!({
        "in_flight": node.in_flight(),
        "pending_retries": retries,
        "dead_letters": dead,
    }))
}

async fn flush_bus(State(node): State<Node>) -> Json<Value> {
    let (count, out) = node.call(|h| h.flush_retries()).await;
    node.dispatch(out).await;
    Json(json!({"flushed": count}))
}

/// Answers one raw wire frame as the bus listener would, for tools and
/// tests without a socket.
async fn bus_frame(State(node): State<Node>, body: String) -> Json<Value> {
    let reply = crate::node::answer(&node, body.trim_end()).await;
    Json(serde_json::to_value(reply).unwrap_or_else(|_| json!({"reason": NackReason::BadFrame})))
}
