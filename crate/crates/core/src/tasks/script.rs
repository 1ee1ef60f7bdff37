use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{AgentRef, AgentStatus, Choice, Record};

use super::{Task, TaskOptions};

/// Which visit of a state a rule applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Occurrence {
    #[default]
    Any,
    Nth(u32),
}

impl Serialize for Occurrence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Occurrence::Any => s.serialize_str("any"),
            Occurrence::Nth(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Occurrence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u32),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Occurrence::Nth(n)),
            Raw::S(s) if s == "any" => Ok(Occurrence::Any),
            Raw::S(s) => Err(serde::de::Error::custom(format!(
                "occurrence must be a number or \"any\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PickPolicy {
    Earliest,
    Latest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PickSelector {
    Policy(PickPolicy),
    Match {
        #[serde(rename = "type", default)]
        message_type: Option<String>,
        /// A subject name or an agent such as `A#0`.
        #[serde(default)]
        from: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptChoice {
    Branch(String),
    Targets(Vec<AgentRef>),
    Payload(Record),
    Pick(PickSelector),
    /// Never decide: the participant does not play along.
    Withhold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub subject: String,
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<u32>,
    #[serde(default)]
    pub occurrence: Occurrence,
    /// Hold the decision until the clock reaches this instant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ms: Option<u64>,
    /// Applies only once at least this many messages of each type were consumed.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub when_consumed: BTreeMap<String, u32>,
    pub choice: ScriptChoice,
    /// Payload for sends decided by `targets`.
    #[serde(default, skip_serializing_if = "Record::is_empty")]
    pub payload: Record,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DefaultPolicy {
    Earliest,
    Latest,
    FirstBranch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub at_ms: u64,
    pub from: AgentRef,
    pub to: AgentRef,
    #[serde(rename = "type")]
    pub message_type: String,
    #[serde(default)]
    pub payload: Record,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub statuses: BTreeMap<String, AgentStatus>,
    /// Pool contents left at the end, as `(type, sender)` pairs per agent.
    #[serde(default)]
    pub residue: BTreeMap<String, Vec<(String, String)>>,
    /// Error code the run must end with instead of quiescence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A deterministic stand-in for the people deciding tasks, plus everything
/// else a scripted run needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeciderScript {
    #[serde(default)]
    pub starters: BTreeMap<String, u32>,
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<DefaultPolicy>,
    /// Instants the clock is advanced to even if nothing is scheduled there.
    #[serde(default)]
    pub advance: Vec<u64>,
    #[serde(default)]
    pub inject: Vec<Injection>,
    #[serde(default)]
    pub expect: Expectations,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Verdict {
    Ready(Choice),
    Hold(u64),
    /// A rule matched but cannot act yet (no suitable message).
    Blocked,
    Withhold,
    Unscripted,
}

impl Rule {
    fn matches(&self, task: &Task) -> bool {
        self.subject == task.agent.subject
            && self.state == task.state
            && self.index.is_none_or(|i| i == task.agent.index)
            && match self.occurrence {
                Occurrence::Any => true,
                Occurrence::Nth(n) => n == task.occurrence,
            }
            && self
                .when_consumed
                .iter()
                .all(|(t, n)| task.context.consumed.get(t).copied().unwrap_or(0) >= *n)
    }
}

fn pick(task: &Task, selector: &PickSelector) -> Option<Choice> {
    let TaskOptions::PickMessage { messages } = &task.options else {
        return None;
    };
    let found = match selector {
        PickSelector::Policy(PickPolicy::Earliest) => messages.first(),
        PickSelector::Policy(PickPolicy::Latest) => messages.last(),
        PickSelector::Match { message_type, from } => messages.iter().find(|m| {
            message_type.as_ref().is_none_or(|t| *t == m.message_type)
                && from
                    .as_ref()
                    .is_none_or(|f| *f == m.from.subject || *f == m.from.to_string())
        }),
    };
    found.map(|m| Choice::PickMessage(m.envelope))
}

fn default_targets(task: &Task) -> Option<Vec<AgentRef>> {
    match &task.options {
        TaskOptions::SendTargets { arms } => {
            let arm = arms.first()?;
            let n = arm.min.max(1) as usize;
            Some(arm.eligible.iter().take(n).cloned().collect())
        }
        TaskOptions::Payload { to, .. } => Some(vec![to.clone()]),
        _ => None,
    }
}

fn default_choice(task: &Task, policy: DefaultPolicy) -> Option<Choice> {
    match &task.options {
        TaskOptions::Branch { labels } => labels.first().cloned().map(Choice::Branch),
        TaskOptions::PickMessage { .. } => {
            let p = match policy {
                DefaultPolicy::Latest => PickPolicy::Latest,
                _ => PickPolicy::Earliest,
            };
            pick(task, &PickSelector::Policy(p))
        }
        TaskOptions::Payload { .. } => Some(Choice::Payload(Record::new())),
        TaskOptions::SendTargets { .. } => Some(Choice::SendTargets {
            targets: default_targets(task)?,
            payload: Record::new(),
        }),
    }
}

impl DeciderScript {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub(crate) fn decide(&self, task: &Task, now: u64) -> Verdict {
        let Some(rule) = self.rules.iter().find(|r| r.matches(task)) else {
            return match self.default.and_then(|p| default_choice(task, p)) {
                Some(c) => Verdict::Ready(c),
                None if self.default.is_some() => Verdict::Blocked,
                None => Verdict::Unscripted,
            };
        };
        if let Some(at) = rule.at_ms.filter(|at| *at > now) {
            return Verdict::Hold(at);
        }
        let choice = match &rule.choice {
            ScriptChoice::Withhold => return Verdict::Withhold,
            ScriptChoice::Branch(l) => Some(Choice::Branch(l.clone())),
            ScriptChoice::Targets(t) => Some(Choice::SendTargets {
                targets: t.clone(),
                payload: rule.payload.clone(),
            }),
            ScriptChoice::Payload(p) => match &task.options {
                TaskOptions::Payload { .. } => Some(Choice::Payload(p.clone())),
                _ => default_targets(task).map(|targets| Choice::SendTargets {
                    targets,
                    payload: p.clone(),
                }),
            },
            ScriptChoice::Pick(sel) => pick(task, sel),
        };
        match choice {
            Some(c) => Verdict::Ready(c),
            None => Verdict::Blocked,
        }
    }
}
