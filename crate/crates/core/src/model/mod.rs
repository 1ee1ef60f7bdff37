//! In-memory representation of subject-oriented process models.
//!
//! A [`ProcessModel`] carries both diagram layers: the interaction layer
//! (subjects, message types and one-way channels between subjects) and the
//! behavior layer (one state machine per internal subject). Models are plain
//! data; [`validate`] checks the structural rules and [`ValidModel`] is the
//! proof that a model passed them.

mod validate;

use std::collections::BTreeSet;
use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use validate::{validate, Severity, ValidationReport, Violation};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("state `{state}` is a {found} state, expected {expected}")]
    WrongStateKind {
        state: String,
        expected: StateKind,
        found: StateKind,
    },
    #[error("unknown state `{0}`")]
    UnknownState(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Single,
    Multi,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectDef {
    pub name: String,
    pub kind: SubjectKind,
    pub max_instances: u32,
    /// Company namespace used for node placement; `None` means "hosted by
    /// whichever node runs the process".
    pub company: Option<String>,
}

impl SubjectDef {
    pub fn single(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: SubjectKind::Single,
            max_instances: 1,
            company: None,
        }
    }

    pub fn multi(name: impl Into<String>, max_instances: u32) -> Self {
        Self {
            name: name.into(),
            kind: SubjectKind::Multi,
            max_instances,
            company: None,
        }
    }

    pub fn external(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: SubjectKind::External,
            max_instances: 1,
            company: None,
        }
    }

    pub fn at(mut self, company: impl Into<String>) -> Self {
        self.company = Some(company.into());
        self
    }

    pub fn is_external(&self) -> bool {
        self.kind == SubjectKind::External
    }

    pub fn is_multi(&self) -> bool {
        self.kind == SubjectKind::Multi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Text,
    Int,
    Dec,
    Bool,
}

impl FieldType {
    pub fn keyword(self) -> &'static str {
        match self {
            FieldType::Text => "text",
            FieldType::Int => "int",
            FieldType::Dec => "dec",
            FieldType::Bool => "bool",
        }
    }

    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word {
            "text" => FieldType::Text,
            "int" => FieldType::Int,
            "dec" => FieldType::Dec,
            "bool" => FieldType::Bool,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub ty: FieldType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTypeDef {
    pub name: String,
    pub fields: Vec<FieldDef>,
}

impl MessageTypeDef {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            fields: Vec::new(),
        }
    }

    pub fn with_field(mut self, name: impl Into<String>, ty: FieldType) -> Self {
        self.fields.push(FieldDef {
            name: name.into(),
            ty,
        });
        self
    }

    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }
}

/// One-way channel. A bidirectional exchange needs two channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDef {
    pub from: String,
    pub to: String,
    pub message_types: Vec<String>,
}

impl ChannelDef {
    pub fn new<I, S>(from: impl Into<String>, to: impl Into<String>, types: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            from: from.into(),
            to: to.into(),
            message_types: types.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Function,
    Send,
    Receive,
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StateKind::Function => "function",
            StateKind::Send => "send",
            StateKind::Receive => "receive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDef {
    pub id: String,
    pub label: String,
    pub kind: StateKind,
    pub is_start: bool,
    pub is_end: bool,
}

impl StateDef {
    pub fn new(id: impl Into<String>, label: impl Into<String>, kind: StateKind) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            kind,
            is_start: false,
            is_end: false,
        }
    }

    pub fn start(mut self) -> Self {
        self.is_start = true;
        self
    }

    pub fn end(mut self) -> Self {
        self.is_end = true;
        self
    }
}

/// Fan-out of a send transition addressed to a multi-subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    One,
    All,
    Choose { min: u32, max: u32 },
}

impl Cardinality {
    /// Inclusive bounds on the number of targets for a subject with
    /// `instances` possible agents.
    pub fn bounds(self, instances: u32) -> (u32, u32) {
        match self {
            Cardinality::One => (1, 1),
            Cardinality::All => (instances, instances),
            Cardinality::Choose { min, max } => (min, max.min(instances)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Branch {
        label: String,
    },
    Send {
        message: String,
        to: String,
        cardinality: Cardinality,
    },
    Receive {
        message: String,
        from: String,
    },
    Timeout {
        after_ms: u64,
    },
}

impl Trigger {
    pub fn is_timeout(&self) -> bool {
        matches!(self, Trigger::Timeout { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionDef {
    pub from: String,
    pub to: String,
    pub trigger: Trigger,
}

impl TransitionDef {
    pub fn branch(from: &str, label: &str, to: &str) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            trigger: Trigger::Branch {
                label: label.into(),
            },
        }
    }

    pub fn send(from: &str, message: &str, recipient: &str, card: Cardinality, to: &str) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            trigger: Trigger::Send {
                message: message.into(),
                to: recipient.into(),
                cardinality: card,
            },
        }
    }

    pub fn receive(from: &str, message: &str, sender: &str, to: &str) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            trigger: Trigger::Receive {
                message: message.into(),
                from: sender.into(),
            },
        }
    }

    pub fn timeout(from: &str, after_ms: u64, to: &str) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            trigger: Trigger::Timeout { after_ms },
        }
    }
}

/// What happens to an agent's pending timer when it enters a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerEffect {
    /// Leave the pending timer (if any) untouched.
    Keep,
    Cancel,
    /// Replace any pending timer with a fresh one for the entered state.
    Arm {
        after_ms: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorDef {
    pub subject: String,
    pub states: Vec<StateDef>,
    pub transitions: Vec<TransitionDef>,
}

impl BehaviorDef {
    pub fn new(subject: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            states: Vec::new(),
            transitions: Vec::new(),
        }
    }

    pub fn state(&self, id: &str) -> Option<&StateDef> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn start_states(&self) -> impl Iterator<Item = &StateDef> {
        self.states.iter().filter(|s| s.is_start)
    }

    pub fn outgoing<'a>(&'a self, state: &'a str) -> impl Iterator<Item = &'a TransitionDef> + 'a {
        self.transitions.iter().filter(move |t| t.from == state)
    }

    pub fn timeout_of(&self, state: &str) -> Option<&TransitionDef> {
        self.transitions
            .iter()
            .find(|t| t.from == state && t.trigger.is_timeout())
    }

    /// Branch labels of a function state, in declaration order.
    pub fn branch_labels(&self, state: &str) -> Vec<String> {
        self.outgoing(state)
            .filter_map(|t| match &t.trigger {
                Trigger::Branch { label } => Some(label.clone()),
                _ => None,
            })
            .collect()
    }

    /// Timer bookkeeping on entering `entering` while a timer for
    /// `pending` (a state id) may be outstanding.
    ///
    /// A timer survives detours through function states and returns to its
    /// own state, so a receive loop with an intermediate check keeps one
    /// window. Entering an end state or a different communication state
    /// drops it.
    pub fn timer_on_entry(&self, pending: Option<&str>, entering: &StateDef) -> TimerEffect {
        if entering.is_end {
            return TimerEffect::Cancel;
        }
        if let Some(t) = self.timeout_of(&entering.id) {
            if pending == Some(entering.id.as_str()) {
                return TimerEffect::Keep;
            }
            if let Trigger::Timeout { after_ms } = t.trigger {
                return TimerEffect::Arm { after_ms };
            }
        }
        match entering.kind {
            StateKind::Function => TimerEffect::Keep,
            StateKind::Send | StateKind::Receive => TimerEffect::Cancel,
        }
    }

    /// States reachable from the start states, each listed once, in BFS order.
    pub fn reachable_states(&self) -> Vec<&StateDef> {
        let mut seen = BTreeSet::new();
        let mut order = Vec::new();
        let mut queue: std::collections::VecDeque<&str> =
            self.start_states().map(|s| s.id.as_str()).collect();
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(state) = self.state(id) {
                order.push(state);
            }
            for t in self.outgoing(id) {
                if !seen.contains(t.to.as_str()) {
                    queue.push_back(&t.to);
                }
            }
        }
        order
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProcessModel {
    pub name: String,
    pub subjects: Vec<SubjectDef>,
    pub message_types: Vec<MessageTypeDef>,
    pub channels: Vec<ChannelDef>,
    pub behaviors: Vec<BehaviorDef>,
}

impl ProcessModel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn subject(&self, name: &str) -> Option<&SubjectDef> {
        self.subjects.iter().find(|s| s.name == name)
    }

    pub fn message_type(&self, name: &str) -> Option<&MessageTypeDef> {
        self.message_types.iter().find(|m| m.name == name)
    }

    pub fn behavior(&self, subject: &str) -> Option<&BehaviorDef> {
        self.behaviors.iter().find(|b| b.subject == subject)
    }

    pub fn channel_permits(&self, from: &str, to: &str, message: &str) -> bool {
        self.channels
            .iter()
            .any(|c| c.from == from && c.to == to && c.message_types.iter().any(|m| m == message))
    }

    /// Validates and wraps the model. Warnings do not block; errors do.
    pub fn into_valid(self) -> Result<ValidModel, ValidationReport> {
        let report = validate(&self);
        if report.has_errors() {
            return Err(report);
        }
        Ok(ValidModel {
            inner: Arc::new(self),
            warnings: report,
        })
    }
}

/// A model that passed [`validate`] without errors. Cheap to clone.
#[derive(Debug, Clone)]
pub struct ValidModel {
    inner: Arc<ProcessModel>,
    warnings: ValidationReport,
}

impl ValidModel {
    pub fn warnings(&self) -> &ValidationReport {
        &self.warnings
    }

    pub fn model(&self) -> &ProcessModel {
        &self.inner
    }
}

impl Deref for ValidModel {
    type Target = ProcessModel;

    fn deref(&self) -> &ProcessModel {
        &self.inner
    }
}

impl PartialEq for ValidModel {
    fn eq(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// `(message type, sender subject)` pairs a receive state accepts, taken
/// from its non-timeout outgoing transitions.
pub fn accepted_receives(
    state: &StateDef,
    behavior: &BehaviorDef,
) -> Result<BTreeSet<(String, String)>, ModelError> {
    if state.kind != StateKind::Receive {
        return Err(ModelError::WrongStateKind {
            state: state.id.clone(),
            expected: StateKind::Receive,
            found: state.kind,
        });
    }
    Ok(behavior
        .outgoing(&state.id)
        .filter_map(|t| match &t.trigger {
            Trigger::Receive { message, from } => Some((message.clone(), from.clone())),
            _ => None,
        })
        .collect())
}

/// Every `(from, to, message type)` triple the channels allow, sorted.
pub fn composed_alphabet(model: &ValidModel) -> BTreeSet<(String, String, String)> {
    model
        .channels
        .iter()
        .flat_map(|c| {
            c.message_types
                .iter()
                .map(move |m| (c.from.clone(), c.to.clone(), m.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn receive_behavior() -> BehaviorDef {
        let mut b = BehaviorDef::new("C");
        b.states = vec![
            StateDef::new("wait", "Wait", StateKind::Receive).start(),
            StateDef::new("fn", "Check", StateKind::Function),
            StateDef::new("other", "Other", StateKind::Receive),
            StateDef::new("done", "Done", StateKind::Function).end(),
        ];
        b.transitions = vec![
            TransitionDef::receive("wait", "Note", "A", "fn"),
            TransitionDef::receive("wait", "Note", "B", "fn"),
            TransitionDef::timeout("wait", 5000, "done"),
            TransitionDef::branch("fn", "again", "wait"),
            TransitionDef::branch("fn", "other", "other"),
            TransitionDef::receive("other", "Note", "A", "done"),
        ];
        b
    }

    #[test]
    fn accepted_receives_excludes_timeouts() {
        let b = receive_behavior();
        let got = accepted_receives(b.state("wait").unwrap(), &b).unwrap();
        let want: BTreeSet<_> = [
            ("Note".to_string(), "A".to_string()),
            ("Note".into(), "B".into()),
        ]
        .into_iter()
        .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn accepted_receives_rejects_function_state() {
        let b = receive_behavior();
        let err = accepted_receives(b.state("fn").unwrap(), &b).unwrap_err();
        assert!(matches!(err, ModelError::WrongStateKind { .. }));
    }

    #[test]
    fn timer_survives_function_detour_and_return() {
        let b = receive_behavior();
        let wait = b.state("wait").unwrap();
        let check = b.state("fn").unwrap();
        let other = b.state("other").unwrap();
        let done = b.state("done").unwrap();
        assert_eq!(
            b.timer_on_entry(None, wait),
            TimerEffect::Arm { after_ms: 5000 }
        );
        assert_eq!(b.timer_on_entry(Some("wait"), check), TimerEffect::Keep);
        assert_eq!(b.timer_on_entry(Some("wait"), wait), TimerEffect::Keep);
        assert_eq!(b.timer_on_entry(Some("wait"), other), TimerEffect::Cancel);
        assert_eq!(b.timer_on_entry(Some("wait"), done), TimerEffect::Cancel);
    }

    #[test]
    fn cardinality_bounds_clamp_to_instances() {
        assert_eq!(Cardinality::One.bounds(4), (1, 1));
        assert_eq!(Cardinality::All.bounds(3), (3, 3));
        assert_eq!(Cardinality::Choose { min: 1, max: 10 }.bounds(4), (1, 4));
    }

    #[test]
    fn reachable_states_lists_each_once() {
        let b = receive_behavior();
        let ids: Vec<_> = b.reachable_states().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["wait", "fn", "done", "other"]);
    }
}
