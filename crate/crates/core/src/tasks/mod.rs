//! Tasks: the decisions an agent waits for, presented to a person or a
//! script. Tasks are not stored; they are derived from engine state, one per
//! agent in `waiting_decision`, so the two can never disagree.

mod driver;
mod script;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::engine::{
    task_id, AgentRef, AgentState, AgentStatus, Choice, Decision, Engine, EngineError, Envelope,
    Record, Selectable,
};
use crate::model::{Cardinality, FieldDef, StateKind, Trigger};

pub use driver::{
    run_scripted, Cluster, DriverError, LocalCluster, RunOutcome, Snapshot, COMMAND_CAP,
};
pub use script::{
    DeciderScript, DefaultPolicy, Expectations, Injection, Occurrence, PickPolicy, PickSelector,
    Rule, ScriptChoice,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Completed,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Branch,
    SendTargets,
    PickMessage,
    Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SendArm {
    pub message: String,
    pub to: String,
    pub min: u32,
    pub max: u32,
    pub eligible: Vec<AgentRef>,
    pub fields: Vec<FieldDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOptions {
    Branch {
        labels: Vec<String>,
    },
    SendTargets {
        arms: Vec<SendArm>,
    },
    PickMessage {
        messages: Vec<Selectable>,
    },
    Payload {
        message: String,
        to: AgentRef,
        fields: Vec<FieldDef>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskContext {
    pub variables: Record,
    pub consumed: std::collections::BTreeMap<String, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: Uuid,
    pub instance: Uuid,
    pub process: String,
    pub agent: AgentRef,
    pub company: Option<String>,
    pub state: String,
    pub label: String,
    pub occurrence: u32,
    pub kind: TaskKind,
    pub options: TaskOptions,
    pub created_at: u64,
    pub status: TaskStatus,
    pub context: TaskContext,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFilter {
    #[serde(default)]
    pub subject: Option<String>,
    #[serde(default)]
    pub company: Option<String>,
    #[serde(default)]
    pub instance: Option<Uuid>,
}

impl TaskFilter {
    fn admits(&self, t: &Task) -> bool {
        self.subject.as_ref().is_none_or(|s| *s == t.agent.subject)
            && self.instance.is_none_or(|i| i == t.instance)
            && self
                .company
                .as_ref()
                .is_none_or(|c| t.company.as_ref() == Some(c))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error("no task {0}")]
    UnknownTask(Uuid),
    #[error("task {0} is no longer open")]
    StaleTask(Uuid),
    #[error("invalid choice: {0}")]
    InvalidChoice(String),
}

impl TaskError {
    pub fn code(&self) -> &'static str {
        match self {
            TaskError::UnknownTask(_) => "UNKNOWN_TASK",
            TaskError::StaleTask(_) => "STALE_TASK",
            TaskError::InvalidChoice(_) => "INVALID_CHOICE",
        }
    }
}

fn task_for(engine: &Engine, a: &AgentState, company: Option<&str>) -> Option<Task> {
    if a.status != AgentStatus::WaitingDecision {
        return None;
    }
    let model = engine.model();
    let agent = a.agent_ref();
    let behavior = model.behavior(&agent.subject)?;
    let state = behavior.state(&a.current_state)?;
    let (kind, options) = match state.kind {
        StateKind::Function => (
            TaskKind::Branch,
            TaskOptions::Branch {
                labels: behavior.branch_labels(&state.id),
            },
        ),
        StateKind::Receive => (
            TaskKind::PickMessage,
            TaskOptions::PickMessage {
                messages: engine.selectable_messages(&agent).ok()?,
            },
        ),
        StateKind::Send => {
            let arms: Vec<SendArm> = behavior
                .outgoing(&state.id)
                .filter_map(|t| match &t.trigger {
                    Trigger::Send {
                        message,
                        to,
                        cardinality,
                    } => {
                        let def = model.subject(to)?;
                        let (min, max) = cardinality.bounds(def.max_instances);
                        Some(SendArm {
                            message: message.clone(),
                            to: to.clone(),
                            min,
                            max,
                            eligible: (0..def.max_instances)
                                .map(|i| AgentRef::new(to.as_str(), i))
                                .collect(),
                            fields: model
                                .message_type(message)
                                .map(|m| m.fields.clone())
                                .unwrap_or_default(),
                        })
                    }
                    _ => None,
                })
                .collect();
            let single = match arms.as_slice() {
                [arm] => {
                    let multi = model.subject(&arm.to).is_some_and(|s| s.is_multi());
                    let one = behavior.outgoing(&state.id).any(|t| {
                        matches!(
                            t.trigger,
                            Trigger::Send {
                                cardinality: Cardinality::One,
                                ..
                            }
                        )
                    });
                    (!multi && one).then(|| arm.clone())
                }
                _ => None,
            };
            match single {
                Some(arm) => (
                    TaskKind::Payload,
                    TaskOptions::Payload {
                        message: arm.message,
                        to: AgentRef::new(arm.to, 0),
                        fields: arm.fields,
                    },
                ),
                None => (TaskKind::SendTargets, TaskOptions::SendTargets { arms }),
            }
        }
    };
    Some(Task {
        id: task_id(engine.instance(), &agent, &state.id, a.occurrence),
        instance: engine.instance(),
        process: model.name.clone(),
        company: model
            .subject(&agent.subject)
            .and_then(|s| s.company.clone())
            .or_else(|| company.map(str::to_string)),
        agent,
        state: state.id.clone(),
        label: state.label.clone(),
        occurrence: a.occurrence,
        kind,
        options,
        created_at: a.decision_since.unwrap_or(a.entered_at),
        status: TaskStatus::Open,
        context: TaskContext {
            variables: a.variables.clone(),
            consumed: a.consumed.clone(),
        },
    })
}

/// Open tasks of one engine, ordered by `(created_at, agent)`.
pub fn open_tasks(engine: &Engine, company: Option<&str>, filter: &TaskFilter) -> Vec<Task> {
    let mut tasks: Vec<Task> = engine
        .agents()
        .filter_map(|a| task_for(engine, a, company))
        .filter(|t| filter.admits(t))
        .collect();
    tasks.sort_by(|a, b| (a.created_at, &a.agent).cmp(&(b.created_at, &b.agent)));
    tasks
}

/// Applies `choice` to the open task `id`. Returns the envelopes the
/// decision emitted, for the caller to route.
pub fn complete_task(
    engine: &mut Engine,
    id: Uuid,
    choice: Choice,
) -> Result<Vec<Envelope>, TaskError> {
    let task = engine
        .agents()
        .filter_map(|a| task_for(engine, a, None))
        .find(|t| t.id == id);
    let Some(task) = task else {
        return Err(match engine.settled_task(id) {
            Some(_) => TaskError::StaleTask(id),
            None => TaskError::UnknownTask(id),
        });
    };
    let fits = matches!(
        (task.kind, &choice),
        (TaskKind::Branch, Choice::Branch(_))
            | (TaskKind::PickMessage, Choice::PickMessage(_))
            | (TaskKind::SendTargets, Choice::SendTargets { .. })
            | (
                TaskKind::Payload,
                Choice::SendTargets { .. } | Choice::Payload(_)
            )
    );
    if !fits {
        return Err(TaskError::InvalidChoice(format!(
            "a {:?} task cannot take this choice",
            task.kind
        )));
    }
    let decision = Decision {
        agent: task.agent.clone(),
        state: task.state.clone(),
        occurrence: Some(task.occurrence),
        choice,
    };
    engine.apply_decision(&decision).map_err(|e| match e {
        EngineError::StaleDecision { .. } => TaskError::StaleTask(id),
        other => TaskError::InvalidChoice(other.to_string()),
    })
}
