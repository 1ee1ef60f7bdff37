use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::model::FieldType;

/// A subject instance inside one process instance, written `Subject#index`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgentRef {
    pub subject: String,
    pub index: u32,
}

impl AgentRef {
    pub fn new(subject: impl Into<String>, index: u32) -> Self {
        Self {
            subject: subject.into(),
            index,
        }
    }
}

impl fmt::Display for AgentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.subject, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("agent reference must look like `Subject#0`, got `{0}`")]
pub struct BadAgentRef(pub String);

impl FromStr for AgentRef {
    type Err = BadAgentRef;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (subject, index) = s.rsplit_once('#').ok_or_else(|| BadAgentRef(s.into()))?;
        let index = index.parse().map_err(|_| BadAgentRef(s.into()))?;
        if subject.is_empty() {
            return Err(BadAgentRef(s.into()));
        }
        Ok(Self::new(subject, index))
    }
}

impl Serialize for AgentRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AgentRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Fully qualified agent address.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentId {
    pub process_instance: Uuid,
    pub subject: String,
    pub index: u32,
}

impl AgentId {
    pub fn local(&self) -> AgentRef {
        AgentRef::new(self.subject.clone(), self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Int(i64),
    Dec(f64),
    Text(String),
}

impl Value {
    pub fn default_for(ty: FieldType) -> Self {
        match ty {
            FieldType::Text => Value::Text(String::new()),
            FieldType::Int => Value::Int(0),
            FieldType::Dec => Value::Dec(0.0),
            FieldType::Bool => Value::Bool(false),
        }
    }

    /// The value coerced to `ty`, if it fits. Integers widen to decimals.
    pub fn coerce(&self, ty: FieldType) -> Option<Value> {
        match (self, ty) {
            (Value::Text(_), FieldType::Text)
            | (Value::Int(_), FieldType::Int)
            | (Value::Dec(_), FieldType::Dec)
            | (Value::Bool(_), FieldType::Bool) => Some(self.clone()),
            (Value::Int(i), FieldType::Dec) => Some(Value::Dec(*i as f64)),
            _ => None,
        }
    }
}

pub type Record = BTreeMap<String, Value>;

/// A routed message instance.
///
/// The JSON form is the wire form: `id, process, instance, from_subject,
/// from_index, to_subject, to_index, type, payload, sent_at`, plus
/// `arrived_at` once the envelope sits in a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "EnvelopeJson", into = "EnvelopeJson")]
pub struct Envelope {
    pub id: Uuid,
    pub process: String,
    pub instance: Uuid,
    pub from: AgentRef,
    pub to: AgentRef,
    pub message_type: String,
    pub payload: Record,
    pub sent_at: u64,
    pub arrived_at: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct EnvelopeJson {
    id: Uuid,
    process: String,
    instance: Uuid,
    from_subject: String,
    from_index: u32,
    to_subject: String,
    to_index: u32,
    #[serde(rename = "type")]
    message_type: String,
    #[serde(default)]
    payload: Record,
    sent_at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arrived_at: Option<u64>,
}

impl From<EnvelopeJson> for Envelope {
    fn from(j: EnvelopeJson) -> Self {
        Envelope {
            id: j.id,
            process: j.process,
            instance: j.instance,
            from: AgentRef::new(j.from_subject, j.from_index),
            to: AgentRef::new(j.to_subject, j.to_index),
            message_type: j.message_type,
            payload: j.payload,
            sent_at: j.sent_at,
            arrived_at: j.arrived_at,
        }
    }
}

impl From<Envelope> for EnvelopeJson {
    fn from(e: Envelope) -> Self {
        EnvelopeJson {
            id: e.id,
            process: e.process,
            instance: e.instance,
            from_subject: e.from.subject,
            from_index: e.from.index,
            to_subject: e.to.subject,
            to_index: e.to.index,
            message_type: e.message_type,
            payload: e.payload,
            sent_at: e.sent_at,
            arrived_at: e.arrived_at,
        }
    }
}

/// Per-agent mailbox ordered by `(arrived_at, id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPool {
    pub capacity: usize,
    pub entries: Vec<Envelope>,
}

impl InputPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub(crate) fn insert(&mut self, e: Envelope) {
        let key = (e.arrived_at, e.id);
        let at = self
            .entries
            .partition_point(|x| (x.arrived_at, x.id) <= key);
        self.entries.insert(at, e);
    }

    pub(crate) fn take(&mut self, id: Uuid) -> Option<Envelope> {
        let at = self.entries.iter().position(|e| e.id == id)?;
        Some(self.entries.remove(at))
    }

    pub fn get(&self, id: Uuid) -> Option<&Envelope> {
        self.entries.iter().find(|e| e.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Running,
    WaitingDecision,
    WaitingMessage,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTimer {
    pub state: String,
    pub fire_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub agent: AgentId,
    pub current_state: String,
    /// How many times the agent has entered `current_state`, counting this visit.
    pub occurrence: u32,
    pub entered_at: u64,
    /// When the current decision became available.
    pub decision_since: Option<u64>,
    pub variables: Record,
    pub pool: InputPool,
    pub status: AgentStatus,
    pub timer: Option<PendingTimer>,
    /// Messages consumed so far, per message type.
    pub consumed: BTreeMap<String, u32>,
    #[serde(skip)]
    pub(crate) visits: BTreeMap<String, u32>,
    #[serde(skip)]
    pub(crate) sends: u32,
}

impl AgentState {
    pub fn agent_ref(&self) -> AgentRef {
        self.agent.local()
    }
}

/// What a decision chooses. The JSON form is externally tagged:
/// `{"branch": "OK"}`, `{"send_targets": {"targets": ["C#0"]}}`,
/// `{"pick_message": "<uuid>"}`, `{"payload": {"field": 1}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Choice {
    Branch(String),
    SendTargets {
        targets: Vec<AgentRef>,
        #[serde(default, skip_serializing_if = "Record::is_empty")]
        payload: Record,
    },
    PickMessage(Uuid),
    Payload(Record),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub agent: AgentRef,
    pub state: String,
    /// Pins the decision to one visit of `state`; `None` accepts the current one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub occurrence: Option<u32>,
    pub choice: Choice,
}

/// A pool entry the agent may pick in its current receive state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selectable {
    pub envelope: Uuid,
    pub message_type: String,
    pub from: AgentRef,
    pub arrived_at: u64,
}
