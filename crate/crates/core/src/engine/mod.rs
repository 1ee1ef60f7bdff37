//! Executes the agents of one process instance hosted on one node.
//!
//! Every mutation is a command (`apply_decision`, `deliver`,
//! `fire_due_timers`, `advance_to`) and appends records to the instance
//! trace. The engine never reads a clock itself: the host moves `now`.

mod trace;
mod types;

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;
use uuid::Uuid;

use crate::model::{
    accepted_receives, BehaviorDef, Cardinality, StateKind, SubjectKind, TimerEffect, Trigger,
    ValidModel,
};
use crate::tasks::TaskStatus;

pub use trace::{first_difference, from_jsonl, logical, to_jsonl, RecordKind, TraceRecord};
pub use types::{
    AgentId, AgentRef, AgentState, AgentStatus, BadAgentRef, Choice, Decision, Envelope, InputPool,
    PendingTimer, Record, Selectable, Value,
};

pub const DEFAULT_POOL_CAPACITY: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("no agent would be started")]
    NoStarter,
    #[error("{count} instances of `{subject}` requested, at most {max} allowed")]
    BoundsExceeded {
        subject: String,
        count: u32,
        max: u32,
    },
    #[error("behavior of `{0}` has more than one start state")]
    MultipleStartStates(String),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("subject `{0}` is not hosted here")]
    NotHosted(String),
    #[error("external subject `{0}` cannot be started")]
    ExternalStarter(String),
    #[error("no agent `{0}`")]
    UnknownAgent(String),
    #[error("decision for `{agent}` in `{state}` is stale")]
    StaleDecision { agent: String, state: String },
    #[error("no message {0} in the pool")]
    NoSuchMessage(Uuid),
    #[error("invalid choice: {0}")]
    InvalidChoice(String),
    #[error("{count} targets outside the fan-out bounds {min}..={max}")]
    FanOutBounds { count: usize, min: u32, max: u32 },
    #[error("input pool of `{0}` is full")]
    PoolFull(String),
    #[error("`{0}` is not at a receive state")]
    NotAtReceive(String),
    #[error("no channel {from} -> {to} carries `{message}`")]
    NoChannel {
        from: String,
        to: String,
        message: String,
    },
    #[error("envelope belongs to instance {0}")]
    WrongInstance(Uuid),
    #[error("clock cannot move backwards from {now} to {requested}")]
    ClockBackwards { now: u64, requested: u64 },
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::NoStarter => "NO_STARTER",
            EngineError::BoundsExceeded { .. } => "BOUNDS_EXCEEDED",
            EngineError::MultipleStartStates(_) => "MULTIPLE_START_STATES",
            EngineError::UnknownSubject(_) => "UNKNOWN_SUBJECT",
            EngineError::NotHosted(_) => "NOT_HOSTED",
            EngineError::ExternalStarter(_) => "EXTERNAL_STARTER",
            EngineError::UnknownAgent(_) => "UNKNOWN_AGENT",
            EngineError::StaleDecision { .. } => "STALE_DECISION",
            EngineError::NoSuchMessage(_) => "NO_SUCH_MESSAGE",
            EngineError::InvalidChoice(_) => "INVALID_CHOICE",
            EngineError::FanOutBounds { .. } => "FAN_OUT_BOUNDS",
            EngineError::PoolFull(_) => "POOL_FULL",
            EngineError::NotAtReceive(_) => "NOT_AT_RECEIVE",
            EngineError::NoChannel { .. } => "NO_CHANNEL",
            EngineError::WrongInstance(_) => "WRONG_INSTANCE",
            EngineError::ClockBackwards { .. } => "CLOCK_BACKWARDS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// Inserted. `selectable` is true when the owner can pick it right now.
    Delivered { selectable: bool },
    /// Already seen for this instance; acknowledged and dropped.
    Duplicate,
}

pub fn task_id(instance: Uuid, agent: &AgentRef, state: &str, occurrence: u32) -> Uuid {
    Uuid::new_v5(
        &instance,
        format!("task/{agent}/{state}/{occurrence}").as_bytes(),
    )
}

#[derive(Debug, Clone)]
pub struct Engine {
    model: ValidModel,
    instance: Uuid,
    company: Option<String>,
    pool_capacity: usize,
    now: u64,
    agents: BTreeMap<AgentRef, AgentState>,
    seen: BTreeSet<Uuid>,
    consumed: BTreeSet<Uuid>,
    settled_tasks: BTreeMap<Uuid, TaskStatus>,
    trace: Vec<TraceRecord>,
    injected: u32,
}

impl Engine {
    /// An instance with no agents yet. Agents appear on first delivery.
    /// `company` restricts hosting to subjects of that company (subjects
    /// without a company tag are hosted anywhere).
    pub fn new(
        model: ValidModel,
        instance: Uuid,
        company: Option<String>,
        pool_capacity: usize,
        now: u64,
    ) -> Result<Self, EngineError> {
        for b in &model.behaviors {
            if b.start_states().count() > 1 {
                return Err(EngineError::MultipleStartStates(b.subject.clone()));
            }
        }
        Ok(Self {
            model,
            instance,
            company,
            pool_capacity: pool_capacity.max(1),
            now,
            agents: BTreeMap::new(),
            seen: BTreeSet::new(),
            consumed: BTreeSet::new(),
            settled_tasks: BTreeMap::new(),
            trace: Vec::new(),
            injected: 0,
        })
    }

    /// Starts `count` agents (indices `0..count`) for every starter subject.
    pub fn instantiate(
        model: ValidModel,
        instance: Uuid,
        starters: &BTreeMap<String, u32>,
        company: Option<String>,
        pool_capacity: usize,
        now: u64,
    ) -> Result<Self, EngineError> {
        if starters.values().all(|n| *n == 0) {
            return Err(EngineError::NoStarter);
        }
        let mut engine = Self::new(model, instance, company, pool_capacity, now)?;
        for (subject, count) in starters {
            let def = engine
                .model
                .subject(subject)
                .ok_or_else(|| EngineError::UnknownSubject(subject.clone()))?;
            if def.kind == SubjectKind::External {
                return Err(EngineError::ExternalStarter(subject.clone()));
            }
            if *count > def.max_instances {
                return Err(EngineError::BoundsExceeded {
                    subject: subject.clone(),
                    count: *count,
                    max: def.max_instances,
                });
            }
            if *count > 0 && !engine.hosts(subject) {
                return Err(EngineError::NotHosted(subject.clone()));
            }
        }
        for (subject, count) in starters {
            for index in 0..*count {
                engine.spawn(&AgentRef::new(subject.clone(), index));
            }
        }
        Ok(engine)
    }

    pub fn model(&self) -> &ValidModel {
        &self.model
    }

    pub fn instance(&self) -> Uuid {
        self.instance
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pool_capacity(&self) -> usize {
        self.pool_capacity
    }

    pub fn hosts(&self, subject: &str) -> bool {
        crate::bus::hosts(self.company.as_deref(), &self.model, subject)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        self.agents.values()
    }

    pub fn agent(&self, agent: &AgentRef) -> Option<&AgentState> {
        self.agents.get(agent)
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    /// Envelope ids ever inserted into a pool of this instance.
    pub fn delivered_ids(&self) -> &BTreeSet<Uuid> {
        &self.seen
    }

    /// Envelope ids consumed by a pick.
    pub fn consumed_ids(&self) -> &BTreeSet<Uuid> {
        &self.consumed
    }

    pub fn settled_task(&self, id: Uuid) -> Option<TaskStatus> {
        self.settled_tasks.get(&id).copied()
    }

    pub fn statuses(&self) -> BTreeMap<String, AgentStatus> {
        self.agents
            .iter()
            .map(|(r, a)| (r.to_string(), a.status))
            .collect()
    }

    /// Pool contents per agent as `(type, sender)` pairs, empty pools omitted.
    pub fn residue(&self) -> BTreeMap<String, Vec<(String, String)>> {
        self.agents
            .iter()
            .filter(|(_, a)| !a.pool.is_empty())
            .map(|(r, a)| {
                let entries = a
                    .pool
                    .entries
                    .iter()
                    .map(|e| (e.message_type.clone(), e.from.to_string()))
                    .collect();
                (r.to_string(), entries)
            })
            .collect()
    }

    /// Appends a record that the engine itself did not cause, such as a
    /// transport event or a clock advance.
    pub fn record(
        &mut self,
        kind: RecordKind,
        agent: impl Into<String>,
        detail: serde_json::Value,
    ) {
        let seq = self.trace.len() as u64 + 1;
        self.trace.push(TraceRecord {
            seq,
            at_ms: self.now,
            kind,
            agent: agent.into(),
            detail,
        });
    }

    pub fn advance_to(&mut self, to: u64) -> Result<(), EngineError> {
        if to < self.now {
            return Err(EngineError::ClockBackwards {
                now: self.now,
                requested: to,
            });
        }
        self.now = to;
        Ok(())
    }

    /// Creates an agent at its start state. No trace record.
    fn spawn(&mut self, agent: &AgentRef) {
        let start = self
            .model
            .behavior(&agent.subject)
            .and_then(|b| b.start_states().next())
            .map(|s| s.id.clone())
            .expect("validated behavior has a start state");
        self.agents.insert(
            agent.clone(),
            AgentState {
                agent: AgentId {
                    process_instance: self.instance,
                    subject: agent.subject.clone(),
                    index: agent.index,
                },
                current_state: start.clone(),
                occurrence: 0,
                entered_at: self.now,
                decision_since: None,
                variables: Record::new(),
                pool: InputPool::new(self.pool_capacity),
                status: AgentStatus::Running,
                timer: None,
                consumed: BTreeMap::new(),
                visits: BTreeMap::new(),
                sends: 0,
            },
        );
        self.enter(agent, &start);
    }

    fn behavior(&self, subject: &str) -> &BehaviorDef {
        self.model
            .behavior(subject)
            .expect("hosted subjects have a behavior")
    }

    fn enter(&mut self, agent: &AgentRef, to: &str) {
        let model = self.model.clone();
        let behavior = model
            .behavior(&agent.subject)
            .expect("hosted subjects have a behavior");
        let state = behavior.state(to).expect("validated transition target");
        let now = self.now;
        let a = self.agents.get_mut(agent).expect("agent exists");
        match behavior.timer_on_entry(a.timer.as_ref().map(|t| t.state.as_str()), state) {
            TimerEffect::Keep => {}
            TimerEffect::Cancel => a.timer = None,
            TimerEffect::Arm { after_ms } => {
                a.timer = Some(PendingTimer {
                    state: to.to_string(),
                    fire_at: now.saturating_add(after_ms),
                })
            }
        }
        let visits = a.visits.entry(to.to_string()).or_default();
        *visits += 1;
        a.occurrence = *visits;
        a.current_state = to.to_string();
        a.entered_at = now;
        a.decision_since = None;
        if state.is_end {
            a.status = AgentStatus::Completed;
            a.timer = None;
            return;
        }
        match state.kind {
            StateKind::Function | StateKind::Send => {
                a.status = AgentStatus::WaitingDecision;
                a.decision_since = Some(now);
            }
            StateKind::Receive => {
                a.status = AgentStatus::WaitingMessage;
                self.refresh(agent);
            }
        }
    }

    /// Promotes a waiting receiver to a decision once something is selectable.
    fn refresh(&mut self, agent: &AgentRef) -> bool {
        let selectable = self
            .selectable_messages(agent)
            .map(|s| !s.is_empty())
            .unwrap_or(false);
        let now = self.now;
        let a = self.agents.get_mut(agent).expect("agent exists");
        if selectable && a.status == AgentStatus::WaitingMessage {
            a.status = AgentStatus::WaitingDecision;
            a.decision_since = Some(now);
        }
        selectable
    }

    /// Pool entries the agent can pick in its current receive state, in
    /// pool order.
    pub fn selectable_messages(&self, agent: &AgentRef) -> Result<Vec<Selectable>, EngineError> {
        let a = self
            .agents
            .get(agent)
            .ok_or_else(|| EngineError::UnknownAgent(agent.to_string()))?;
        let behavior = self.behavior(&agent.subject);
        let state = behavior
            .state(&a.current_state)
            .expect("agents sit at declared states");
        if a.status == AgentStatus::Completed {
            return Err(EngineError::NotAtReceive(agent.to_string()));
        }
        let accepted = accepted_receives(state, behavior)
            .map_err(|_| EngineError::NotAtReceive(agent.to_string()))?;
        Ok(a.pool
            .entries
            .iter()
            .filter(|e| accepted.contains(&(e.message_type.clone(), e.from.subject.clone())))
            .map(|e| Selectable {
                envelope: e.id,
                message_type: e.message_type.clone(),
                from: e.from.clone(),
                arrived_at: e.arrived_at.unwrap_or(e.sent_at),
            })
            .collect())
    }

    pub fn apply_decision(&mut self, d: &Decision) -> Result<Vec<Envelope>, EngineError> {
        let model = self.model.clone();
        let a = self
            .agents
            .get(&d.agent)
            .ok_or_else(|| EngineError::UnknownAgent(d.agent.to_string()))?;
        let stale = a.status != AgentStatus::WaitingDecision
            || a.current_state != d.state
            || d.occurrence.is_some_and(|o| o != a.occurrence);
        if stale {
            return Err(EngineError::StaleDecision {
                agent: d.agent.to_string(),
                state: d.state.clone(),
            });
        }
        let occurrence = a.occurrence;
        let behavior = model.behavior(&d.agent.subject).expect("hosted");
        let state = behavior.state(&d.state).expect("declared");

        let (next, emitted, extra) = match (state.kind, &d.choice) {
            (StateKind::Function, Choice::Branch(label)) => {
                let t = behavior
                    .outgoing(&state.id)
                    .find(|t| matches!(&t.trigger, Trigger::Branch { label: l } if l == label))
                    .ok_or_else(|| {
                        EngineError::InvalidChoice(format!("no branch labelled {label:?}"))
                    })?;
                (t.to.clone(), Vec::new(), json!({}))
            }
            (StateKind::Send, Choice::SendTargets { targets, payload }) => {
                self.plan_send(behavior, &state.id, &d.agent, targets, payload)?
            }
            (StateKind::Send, Choice::Payload(payload)) => {
                let arms: Vec<_> = behavior
                    .outgoing(&state.id)
                    .filter_map(|t| match &t.trigger {
                        Trigger::Send {
                            to, cardinality, ..
                        } => Some((to, *cardinality)),
                        _ => None,
                    })
                    .collect();
                let target = match arms.as_slice() {
                    [(to, Cardinality::One)]
                        if !model.subject(to).is_some_and(|s| s.is_multi()) =>
                    {
                        AgentRef::new(to.as_str(), 0)
                    }
                    _ => {
                        return Err(EngineError::InvalidChoice(
                            "this send state needs explicit targets".into(),
                        ))
                    }
                };
                self.plan_send(behavior, &state.id, &d.agent, &[target], payload)?
            }
            (StateKind::Receive, Choice::PickMessage(id)) => {
                let env = a.pool.get(*id).ok_or(EngineError::NoSuchMessage(*id))?;
                let t = behavior
                    .outgoing(&state.id)
                    .find(|t| {
                        matches!(&t.trigger, Trigger::Receive { message, from }
                            if *message == env.message_type && *from == env.from.subject)
                    })
                    .ok_or_else(|| {
                        EngineError::InvalidChoice(format!(
                            "`{}` from `{}` is not accepted in `{}`",
                            env.message_type, env.from, state.id
                        ))
                    })?;
                let next = t.to.clone();
                let a = self.agents.get_mut(&d.agent).expect("checked");
                let env = a.pool.take(*id).expect("checked");
                for (k, v) in &env.payload {
                    a.variables.insert(k.clone(), v.clone());
                }
                *a.consumed.entry(env.message_type.clone()).or_default() += 1;
                self.consumed.insert(env.id);
                (
                    next,
                    Vec::new(),
                    json!({"type": env.message_type, "from": env.from.to_string()}),
                )
            }
            (kind, _) => {
                return Err(EngineError::InvalidChoice(format!(
                    "choice does not fit a {kind} state"
                )))
            }
        };

        self.settled_tasks.insert(
            task_id(self.instance, &d.agent, &d.state, occurrence),
            TaskStatus::Completed,
        );
        let mut detail = json!({
            "state": d.state,
            "occurrence": occurrence,
            "choice": d.choice,
            "next": next,
        });
        if let serde_json::Value::Object(extra) = extra {
            detail.as_object_mut().expect("object").extend(extra);
        }
        if !emitted.is_empty() {
            let list: Vec<_> = emitted
                .iter()
                .map(|e: &Envelope| json!({"id": e.id, "type": e.message_type, "to": e.to.to_string()}))
                .collect();
            detail["envelopes"] = json!(list);
        }
        self.record(RecordKind::Decision, d.agent.to_string(), detail);
        self.enter(&d.agent, &next);
        Ok(emitted)
    }

    /// Checks a send decision and builds its envelopes. Bumps the agent's
    /// send counter only once the decision is known to be valid.
    fn plan_send(
        &mut self,
        behavior: &BehaviorDef,
        state: &str,
        agent: &AgentRef,
        targets: &[AgentRef],
        payload: &Record,
    ) -> Result<(String, Vec<Envelope>, serde_json::Value), EngineError> {
        let model = self.model.clone();
        let subject = match targets.first() {
            Some(t) => t.subject.as_str(),
            None => {
                return Err(EngineError::InvalidChoice("no targets".into()));
            }
        };
        if targets.iter().any(|t| t.subject != subject) {
            return Err(EngineError::InvalidChoice(
                "all targets must be agents of one subject".into(),
            ));
        }
        let (message, cardinality, next) = behavior
            .outgoing(state)
            .find_map(|t| match &t.trigger {
                Trigger::Send {
                    message,
                    to,
                    cardinality,
                } if to == subject => Some((message.clone(), *cardinality, t.to.clone())),
                _ => None,
            })
            .ok_or_else(|| {
                EngineError::InvalidChoice(format!("`{state}` sends nothing to `{subject}`"))
            })?;
        let def = model
            .subject(subject)
            .ok_or_else(|| EngineError::UnknownSubject(subject.to_string()))?;
        let mut sorted: Vec<AgentRef> = targets.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != targets.len() {
            return Err(EngineError::InvalidChoice("duplicate target".into()));
        }
        if let Some(bad) = sorted.iter().find(|t| t.index >= def.max_instances) {
            return Err(EngineError::InvalidChoice(format!(
                "`{bad}` is beyond the {} instances of `{subject}`",
                def.max_instances
            )));
        }
        let (min, max) = cardinality.bounds(def.max_instances);
        if sorted.len() < min as usize || sorted.len() > max as usize {
            return Err(EngineError::FanOutBounds {
                count: sorted.len(),
                min,
                max,
            });
        }

        let schema = model
            .message_type(&message)
            .expect("validated message type");
        let a = self.agents.get(agent).expect("checked");
        for key in payload.keys() {
            if schema.field(key).is_none() {
                return Err(EngineError::InvalidChoice(format!(
                    "`{message}` has no field `{key}`"
                )));
            }
        }
        let mut body = Record::new();
        for f in &schema.fields {
            let value = match payload.get(&f.name) {
                Some(v) => v.coerce(f.ty).ok_or_else(|| {
                    EngineError::InvalidChoice(format!(
                        "field `{}` expects {}",
                        f.name,
                        f.ty.keyword()
                    ))
                })?,
                None => a
                    .variables
                    .get(&f.name)
                    .and_then(|v| v.coerce(f.ty))
                    .unwrap_or_else(|| Value::default_for(f.ty)),
            };
            body.insert(f.name.clone(), value);
        }

        let now = self.now;
        let process = model.name.clone();
        let instance = self.instance;
        let a = self.agents.get_mut(agent).expect("checked");
        let emitted = sorted
            .into_iter()
            .map(|to| {
                a.sends += 1;
                Envelope {
                    id: Uuid::new_v5(&instance, format!("{agent}/send/{}", a.sends).as_bytes()),
                    process: process.clone(),
                    instance,
                    from: agent.clone(),
                    to,
                    message_type: message.clone(),
                    payload: body.clone(),
                    sent_at: now,
                    arrived_at: None,
                }
            })
            .collect();
        Ok((next, emitted, json!({})))
    }

    /// An envelope from an agent this node does not run, typically an
    /// external subject standing in for another company.
    pub fn external_envelope(
        &mut self,
        from: AgentRef,
        to: AgentRef,
        message_type: &str,
        payload: Record,
    ) -> Envelope {
        self.injected += 1;
        Envelope {
            id: Uuid::new_v5(
                &self.instance,
                format!("inject/{from}/{}", self.injected).as_bytes(),
            ),
            process: self.model.name.clone(),
            instance: self.instance,
            from,
            to,
            message_type: message_type.to_string(),
            payload,
            sent_at: self.now,
            arrived_at: None,
        }
    }

    pub fn deliver(&mut self, mut e: Envelope) -> Result<Delivery, EngineError> {
        if e.instance != self.instance {
            return Err(EngineError::WrongInstance(e.instance));
        }
        if self.seen.contains(&e.id) {
            self.record(
                RecordKind::Duplicate,
                e.to.to_string(),
                json!({"envelope": e.id, "type": e.message_type, "from": e.from.to_string()}),
            );
            return Ok(Delivery::Duplicate);
        }
        let def = self
            .model
            .subject(&e.to.subject)
            .ok_or_else(|| EngineError::UnknownSubject(e.to.subject.clone()))?;
        if !self.hosts(&e.to.subject) || e.to.index >= def.max_instances {
            return Err(EngineError::UnknownSubject(e.to.to_string()));
        }
        if !self
            .model
            .channel_permits(&e.from.subject, &e.to.subject, &e.message_type)
        {
            return Err(EngineError::NoChannel {
                from: e.from.subject.clone(),
                to: e.to.subject.clone(),
                message: e.message_type.clone(),
            });
        }
        if !self.agents.contains_key(&e.to) {
            self.spawn(&e.to);
        }
        let to = e.to.clone();
        if self.agents[&to].pool.is_full() {
            self.record(
                RecordKind::Reject,
                to.to_string(),
                json!({"envelope": e.id, "type": e.message_type, "from": e.from.to_string(), "reason": "POOL_FULL"}),
            );
            return Err(EngineError::PoolFull(to.to_string()));
        }
        e.arrived_at = Some(self.now);
        let detail = json!({"envelope": e.id, "type": e.message_type, "from": e.from.to_string()});
        self.seen.insert(e.id);
        let a = self.agents.get_mut(&to).expect("spawned");
        a.pool.insert(e);
        let size = a.pool.len();
        let mut detail = detail;
        detail["pool"] = json!(size);
        self.record(RecordKind::Deliver, to.to_string(), detail);
        let selectable = self.refresh(&to);
        Ok(Delivery::Delivered { selectable })
    }

    /// Timers whose agent currently sits at the timer's state, sorted by
    /// `(fire_at, agent)`. A timer kept across a detour is dormant until the
    /// agent returns.
    pub fn pending_timers(&self) -> Vec<(u64, AgentRef, String)> {
        let mut out: Vec<_> = self
            .agents
            .iter()
            .filter_map(|(r, a)| {
                a.timer
                    .as_ref()
                    .filter(|t| t.state == a.current_state && a.status != AgentStatus::Completed)
                    .map(|t| (t.fire_at, r.clone(), t.state.clone()))
            })
            .collect();
        out.sort();
        out
    }

    pub fn next_timer_at(&self) -> Option<u64> {
        self.pending_timers().first().map(|t| t.0)
    }

    /// Fires every active timer with `fire_at <= now`, in `(fire_at, agent)` order.
    pub fn fire_due_timers(&mut self) -> Vec<(AgentRef, String)> {
        let now = self.now;
        let due: Vec<_> = self
            .pending_timers()
            .into_iter()
            .filter(|t| t.0 <= now)
            .collect();
        let mut fired = Vec::new();
        for (_, agent, state) in due {
            let a = &self.agents[&agent];
            if a.current_state != state || a.timer.as_ref().map(|t| &t.state) != Some(&state) {
                continue;
            }
            if a.status == AgentStatus::WaitingDecision {
                let id = task_id(self.instance, &agent, &state, a.occurrence);
                self.settled_tasks.insert(id, TaskStatus::Cancelled);
            }
            let next = self
                .behavior(&agent.subject)
                .timeout_of(&state)
                .map(|t| t.to.clone())
                .expect("timers exist only for states with a timeout");
            self.agents.get_mut(&agent).expect("exists").timer = None;
            self.record(
                RecordKind::Timer,
                agent.to_string(),
                json!({"state": state, "next": next}),
            );
            self.enter(&agent, &next);
            fired.push((agent, state));
        }
        fired
    }
}
