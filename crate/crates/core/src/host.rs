//! The synchronous heart of a node: registered processes, running
//! instances, the routing table and the retry queue, all behind one `&mut`.
//!
//! A host never touches a socket. Envelopes for other nodes come back as
//! [`Outbound`] values; the caller ships them and reports the outcome with
//! [`Host::ack`], [`Host::nack`] or [`Host::connection_failed`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use uuid::Uuid;

use crate::bus::{retry_policy, Endpoint, NackReason, Peer, RoutingTable, Schedule};
use crate::clock::{Clock, ClockError, ClockMode};
use crate::engine::{
    AgentRef, Choice, Delivery, Engine, EngineError, Envelope, Record, RecordKind,
    DEFAULT_POOL_CAPACITY,
};
use crate::model::ValidModel;
use crate::tasks::{complete_task, open_tasks, Task, TaskError, TaskFilter};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostConfig {
    pub company: Option<String>,
    pub pool_capacity: usize,
    pub clock: ClockMode,
    pub peers: Vec<Peer>,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            company: None,
            pool_capacity: DEFAULT_POOL_CAPACITY,
            clock: ClockMode::Virtual,
            peers: Vec::new(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HostError {
    #[error("unknown process `{0}`")]
    UnknownProcess(String),
    #[error("unknown instance {0}")]
    UnknownInstance(Uuid),
    #[error("instance {0} already exists")]
    DuplicateInstance(Uuid),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Clock(#[from] ClockError),
}

impl HostError {
    pub fn code(&self) -> &'static str {
        match self {
            HostError::UnknownProcess(_) => "UNKNOWN_PROCESS",
            HostError::UnknownInstance(_) => "UNKNOWN_INSTANCE",
            HostError::DuplicateInstance(_) => "DUPLICATE_INSTANCE",
            HostError::Engine(e) => e.code(),
            HostError::Task(e) => e.code(),
            HostError::Clock(ClockError::Backwards { .. }) => "CLOCK_BACKWARDS",
            HostError::Clock(ClockError::NotVirtual) => "CLOCK_NOT_VIRTUAL",
        }
    }
}

/// An envelope to be written to a peer. `attempt` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outbound {
    pub envelope: Envelope,
    pub peer: Peer,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub envelope: Envelope,
    pub attempts: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Retry {
    envelope: Envelope,
    attempt: u32,
    due: u64,
    endpoint: Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingRetry {
    pub envelope: Uuid,
    pub attempt: u32,
    pub due: u64,
}

/// Id of the `n`th instance (1-based) a virtual-clock host starts for
/// `process`. Deterministic so that replays and goldens line up.
pub fn virtual_instance_id(process: &str, n: u64) -> Uuid {
    Uuid::new_v5(
        &Uuid::NAMESPACE_OID,
        format!("subjektiv/{process}/{n}").as_bytes(),
    )
}

pub struct Host {
    config: HostConfig,
    clock: Clock,
    processes: BTreeMap<String, ValidModel>,
    routes: RoutingTable,
    instances: BTreeMap<Uuid, Engine>,
    retries: Vec<Retry>,
    dead_letters: Vec<DeadLetter>,
    started: u64,
}

impl Host {
    pub fn new(config: HostConfig) -> Self {
        Self {
            clock: Clock::new(config.clock),
            config,
            processes: BTreeMap::new(),
            routes: RoutingTable::default(),
            instances: BTreeMap::new(),
            retries: Vec::new(),
            dead_letters: Vec::new(),
            started: 0,
        }
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    pub fn company(&self) -> Option<&str> {
        self.config.company.as_deref()
    }

    pub fn now(&self) -> u64 {
        self.clock.now()
    }

    pub fn register(&mut self, model: ValidModel) {
        self.routes
            .add_process(&model, self.config.company.as_deref(), &self.config.peers);
        self.processes.insert(model.name.clone(), model);
    }

    pub fn process(&self, name: &str) -> Option<&ValidModel> {
        self.processes.get(name)
    }

    pub fn processes(&self) -> impl Iterator<Item = &ValidModel> {
        self.processes.values()
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn instance(&self, id: Uuid) -> Option<&Engine> {
        self.instances.get(&id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Engine> {
        self.instances.values()
    }

    pub fn dead_letters(&self) -> &[DeadLetter] {
        &self.dead_letters
    }

    pub fn pending_retries(&self) -> Vec<PendingRetry> {
        self.retries
            .iter()
            .map(|r| PendingRetry {
                envelope: r.envelope.id,
                attempt: r.attempt,
                due: r.due,
            })
            .collect()
    }

    /// Brings every instance up to the clock and fires timers that are due.
    /// Runs before each mutating command so a due timer always wins against
    /// a later decision.
    fn sync(&mut self) -> usize {
        let now = self.clock.now();
        let mut fired = 0;
        for engine in self.instances.values_mut() {
            if engine.now() < now {
                engine.advance_to(now).expect("clock is monotone");
            }
            fired += engine.fire_due_timers().len();
        }
        fired
    }

    pub fn start(
        &mut self,
        process: &str,
        starters: &BTreeMap<String, u32>,
        id: Option<Uuid>,
    ) -> Result<Uuid, HostError> {
        self.sync();
        let model = self
            .processes
            .get(process)
            .ok_or_else(|| HostError::UnknownProcess(process.to_string()))?
            .clone();
        self.started += 1;
        let id = id.unwrap_or_else(|| match self.config.clock {
            ClockMode::Virtual => virtual_instance_id(process, self.started),
            ClockMode::Wall => Uuid::new_v4(),
        });
        if self.instances.contains_key(&id) {
            return Err(HostError::DuplicateInstance(id));
        }
        let engine = Engine::instantiate(
            model,
            id,
            starters,
            self.config.company.clone(),
            self.config.pool_capacity,
            self.clock.now(),
        )?;
        self.instances.insert(id, engine);
        Ok(id)
    }

    pub fn tasks(&mut self, filter: &TaskFilter) -> Vec<Task> {
        self.sync();
        let company = self.config.company.clone();
        let mut all: Vec<Task> = self
            .instances
            .values()
            .filter(|e| filter.instance.is_none_or(|i| i == e.instance()))
            .flat_map(|e| open_tasks(e, company.as_deref(), filter))
            .collect();
        all.sort_by(|a, b| {
            (a.created_at, a.instance, &a.agent).cmp(&(b.created_at, b.instance, &b.agent))
        });
        all
    }

    /// Completes a task and routes whatever it emitted. Envelopes for other
    /// nodes are returned.
    pub fn complete(&mut self, task: Uuid, choice: Choice) -> Result<Vec<Outbound>, HostError> {
        self.sync();
        let mut found = None;
        for (id, engine) in &self.instances {
            if engine.settled_task(task).is_some()
                || open_tasks(engine, None, &TaskFilter::default())
                    .iter()
                    .any(|t| t.id == task)
            {
                found = Some(*id);
                break;
            }
        }
        let instance = found.ok_or(TaskError::UnknownTask(task))?;
        let engine = self.instances.get_mut(&instance).expect("found");
        let emitted = complete_task(engine, task, choice)?;
        Ok(self.route(instance, emitted))
    }

    fn route(&mut self, instance: Uuid, envelopes: Vec<Envelope>) -> Vec<Outbound> {
        let mut out = Vec::new();
        for e in envelopes {
            match self.routes.route(&e.process, &e.to.subject).cloned() {
                Some(Endpoint::Local) => self.deliver_local(instance, e, 1),
                Some(Endpoint::Remote(peer)) => {
                    let engine = self.instances.get_mut(&instance).expect("routing instance");
                    engine.record(
                        RecordKind::Forward,
                        e.to.to_string(),
                        json!({"envelope": e.id, "type": e.message_type, "from": e.from.to_string(), "company": peer.company}),
                    );
                    out.push(Outbound {
                        envelope: e,
                        peer,
                        attempt: 1,
                    });
                }
                None => self.dead_letter(instance, e, 1, "UNROUTABLE"),
            }
        }
        out
    }

    fn deliver_local(&mut self, instance: Uuid, e: Envelope, attempt: u32) {
        let engine = self.instances.get_mut(&instance).expect("routing instance");
        match engine.deliver(e.clone()) {
            Ok(_) => {}
            Err(EngineError::PoolFull(_)) => self.schedule(
                instance,
                e,
                attempt,
                Some(NackReason::PoolFull),
                Endpoint::Local,
            ),
            Err(other) => self.dead_letter(instance, e, attempt, other.code()),
        }
    }

    fn schedule(
        &mut self,
        instance: Uuid,
        e: Envelope,
        attempt: u32,
        reason: Option<NackReason>,
        endpoint: Endpoint,
    ) {
        match retry_policy(reason, attempt) {
            Schedule::RetryAfter {
                delay_ms,
                next_attempt,
            } => {
                let due = self.clock.now() + delay_ms;
                if let Some(engine) = self.instances.get_mut(&instance) {
                    engine.record(
                        RecordKind::Retry,
                        e.to.to_string(),
                        json!({"envelope": e.id, "attempt": next_attempt, "due": due}),
                    );
                }
                self.retries.push(Retry {
                    envelope: e,
                    attempt: next_attempt,
                    due,
                    endpoint,
                });
            }
            Schedule::DeadLetter { attempts } => {
                let reason = reason.map(|r| r.as_str()).unwrap_or("CONNECTION_FAILED");
                self.dead_letter(instance, e, attempts, reason)
            }
        }
    }

    fn dead_letter(&mut self, instance: Uuid, e: Envelope, attempts: u32, reason: &str) {
        if let Some(engine) = self.instances.get_mut(&instance) {
            engine.record(
                RecordKind::DeadLetter,
                e.to.to_string(),
                json!({"envelope": e.id, "attempts": attempts, "reason": reason}),
            );
        }
        self.dead_letters.push(DeadLetter {
            envelope: e,
            attempts,
            reason: reason.to_string(),
        });
    }

    pub fn ack(&mut self, out: &Outbound) {
        if let Some(engine) = self.instances.get_mut(&out.envelope.instance) {
            engine.record(
                RecordKind::Ack,
                out.envelope.to.to_string(),
                json!({"envelope": out.envelope.id, "attempt": out.attempt}),
            );
        }
    }

    pub fn nack(&mut self, out: &Outbound, reason: NackReason) {
        let instance = out.envelope.instance;
        if let Some(engine) = self.instances.get_mut(&instance) {
            engine.record(
                RecordKind::Nack,
                out.envelope.to.to_string(),
                json!({"envelope": out.envelope.id, "attempt": out.attempt, "reason": reason}),
            );
        }
        self.schedule(
            instance,
            out.envelope.clone(),
            out.attempt,
            Some(reason),
            Endpoint::Remote(out.peer.clone()),
        );
    }

    pub fn connection_failed(&mut self, out: &Outbound) {
        self.schedule(
            out.envelope.instance,
            out.envelope.clone(),
            out.attempt,
            None,
            Endpoint::Remote(out.peer.clone()),
        );
    }

    /// Hands an envelope that arrived from another node to the owning
    /// instance, creating the instance on first contact.
    pub fn receive(&mut self, e: Envelope) -> Result<Delivery, NackReason> {
        self.sync();
        let model = self
            .processes
            .get(&e.process)
            .ok_or(NackReason::UnknownProcess)?
            .clone();
        if !crate::bus::hosts(self.config.company.as_deref(), &model, &e.to.subject) {
            return Err(NackReason::UnknownSubject);
        }
        if !self.instances.contains_key(&e.instance) {
            let engine = Engine::new(
                model,
                e.instance,
                self.config.company.clone(),
                self.config.pool_capacity,
                self.clock.now(),
            )
            .map_err(|_| NackReason::UnknownProcess)?;
            self.instances.insert(e.instance, engine);
        }
        let engine = self.instances.get_mut(&e.instance).expect("created");
        engine.deliver(e).map_err(|err| match err {
            EngineError::PoolFull(_) => NackReason::PoolFull,
            EngineError::UnknownSubject(_) => NackReason::UnknownSubject,
            _ => NackReason::BadFrame,
        })
    }

    /// Feeds a message from a subject this node does not run (an external
    /// participant) into an instance.
    pub fn inject(
        &mut self,
        instance: Uuid,
        from: AgentRef,
        to: AgentRef,
        message_type: &str,
        payload: Record,
    ) -> Result<Vec<Outbound>, HostError> {
        self.sync();
        let engine = self
            .instances
            .get_mut(&instance)
            .ok_or(HostError::UnknownInstance(instance))?;
        let e = engine.external_envelope(from, to, message_type, payload);
        Ok(self.route(instance, vec![e]))
    }

    pub fn fire_due_timers(&mut self) -> usize {
        self.sync()
    }

    /// Moves a virtual clock. Records an `advance` in every instance.
    pub fn advance_to(&mut self, to: u64) -> Result<(), HostError> {
        let before = self.clock.now();
        self.clock.advance_to(to)?;
        if to > before {
            for engine in self.instances.values_mut() {
                engine.advance_to(to)?;
                engine.record(RecordKind::Advance, "clock", json!({"to_ms": to}));
            }
        }
        Ok(())
    }

    /// The next instant at which something is scheduled: an active timer
    /// or a retry.
    pub fn next_stop(&self) -> Option<u64> {
        let timers = self.instances.values().filter_map(|e| e.next_timer_at());
        let retries = self.retries.iter().map(|r| r.due);
        timers.chain(retries).min()
    }

    /// Performs retries that are due. Local ones are delivered here; remote
    /// ones are returned. The count includes both.
    pub fn flush_retries(&mut self) -> (usize, Vec<Outbound>) {
        self.sync();
        let now = self.clock.now();
        let (due, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.retries)
            .into_iter()
            .partition(|r| r.due <= now);
        self.retries = rest;
        let count = due.len();
        let mut out = Vec::new();
        for r in due {
            match r.endpoint {
                Endpoint::Local => {
                    let instance = r.envelope.instance;
                    self.deliver_local(instance, r.envelope, r.attempt)
                }
                Endpoint::Remote(peer) => out.push(Outbound {
                    envelope: r.envelope,
                    peer,
                    attempt: r.attempt,
                }),
            }
        }
        (count, out)
    }
}
