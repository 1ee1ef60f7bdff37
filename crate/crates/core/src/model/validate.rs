use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Cardinality, ProcessModel, StateKind, SubjectKind, Trigger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    pub severity: Severity,
    /// Path to the offending element, e.g. `behavior Customer/state wait`.
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{sev} {} at {}: {}",
            self.rule, self.location, self.message
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.violations
            .iter()
            .any(|v| v.severity == Severity::Error)
    }

    pub fn contains(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    pub fn rules(&self) -> Vec<&'static str> {
        self.violations.iter().map(|v| v.rule).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn error(
        &mut self,
        rule: &'static str,
        location: impl Into<String>,
        message: impl Into<String>,
    ) {
        self.push(rule, Severity::Error, location.into(), message.into());
    }

    fn warn(
        &mut self,
        rule: &'static str,
        location: impl Into<String>,
        message: impl Into<String>,
    ) {
        self.push(rule, Severity::Warning, location.into(), message.into());
    }

    fn push(&mut self, rule: &'static str, severity: Severity, location: String, message: String) {
        self.0.push(Violation {
            rule,
            severity,
            location,
            message,
        });
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Checks every structural rule of the model. Pure: the same model always
/// yields the same report, in the same order.
pub fn validate(model: &ProcessModel) -> ValidationReport {
    let mut out = Collector(Vec::new());
    check_names(model, &mut out);
    check_subjects(model, &mut out);
    check_message_types(model, &mut out);
    check_channels(model, &mut out);
    for behavior in &model.behaviors {
        check_behavior(model, behavior, &mut out);
    }
    ValidationReport { violations: out.0 }
}

fn check_names(model: &ProcessModel, out: &mut Collector) {
    let mut idents: Vec<(String, &str)> = vec![("process".into(), model.name.as_str())];
    for s in &model.subjects {
        idents.push((format!("subject {}", s.name), &s.name));
        if let Some(c) = &s.company {
            idents.push((format!("subject {}", s.name), c));
        }
    }
    for m in &model.message_types {
        idents.push((format!("message {}", m.name), &m.name));
        for f in &m.fields {
            idents.push((format!("message {}/field {}", m.name, f.name), &f.name));
        }
    }
    for b in &model.behaviors {
        for s in &b.states {
            idents.push((format!("behavior {}/state {}", b.subject, s.id), &s.id));
            if s.label.contains(['\n', '\r']) {
                out.error(
                    "BAD_LABEL",
                    format!("behavior {}/state {}", b.subject, s.id),
                    "labels must fit on one line",
                );
            }
        }
        for t in &b.transitions {
            if let Trigger::Branch { label } = &t.trigger {
                if label.contains(['\n', '\r']) {
                    out.error(
                        "BAD_LABEL",
                        format!("behavior {}/state {}", b.subject, t.from),
                        "branch labels must fit on one line",
                    );
                }
            }
        }
    }
    for (location, name) in idents {
        if !is_identifier(name) {
            out.error(
                "BAD_IDENTIFIER",
                location,
                format!("`{name}` is not an identifier"),
            );
        }
    }
}

fn check_subjects(model: &ProcessModel, out: &mut Collector) {
    let mut seen = BTreeSet::new();
    for s in &model.subjects {
        let loc = format!("subject {}", s.name);
        if !seen.insert(s.name.as_str()) {
            out.error(
                "DUPLICATE_SUBJECT",
                &loc,
                format!("subject `{}` declared twice", s.name),
            );
        }
        match s.kind {
            SubjectKind::Multi if s.max_instances < 2 => out.error(
                "BAD_MULTIPLICITY",
                &loc,
                "a multi-subject needs at least 2 instances",
            ),
            SubjectKind::Single | SubjectKind::External if s.max_instances != 1 => out.error(
                "BAD_MULTIPLICITY",
                &loc,
                "a single subject has exactly 1 instance",
            ),
            _ => {}
        }
        let behaviors = model
            .behaviors
            .iter()
            .filter(|b| b.subject == s.name)
            .count();
        if s.kind == SubjectKind::External {
            if behaviors > 0 {
                out.error(
                    "EXTERNAL_WITH_BEHAVIOR",
                    &loc,
                    "external subjects have no behavior",
                );
            }
        } else if behaviors == 0 {
            out.error("MISSING_BEHAVIOR", &loc, "internal subject has no behavior");
        } else if behaviors > 1 {
            out.error(
                "DUPLICATE_BEHAVIOR",
                &loc,
                "subject has more than one behavior",
            );
        }
    }
    for b in &model.behaviors {
        if model.subject(&b.subject).is_none() {
            out.error(
                "UNKNOWN_BEHAVIOR_SUBJECT",
                format!("behavior {}", b.subject),
                "behavior for an undeclared subject",
            );
        }
    }
}

fn check_message_types(model: &ProcessModel, out: &mut Collector) {
    let mut seen = BTreeSet::new();
    for m in &model.message_types {
        let loc = format!("message {}", m.name);
        if !seen.insert(m.name.as_str()) {
            out.error(
                "DUPLICATE_MESSAGE_TYPE",
                &loc,
                "message type declared twice",
            );
        }
        let mut fields = BTreeSet::new();
        for f in &m.fields {
            if !fields.insert(f.name.as_str()) {
                out.error(
                    "DUPLICATE_FIELD",
                    format!("{loc}/field {}", f.name),
                    "payload field declared twice",
                );
            }
        }
    }
}

fn check_channels(model: &ProcessModel, out: &mut Collector) {
    for c in &model.channels {
        let loc = format!("channel {} -> {}", c.from, c.to);
        for end in [&c.from, &c.to] {
            if model.subject(end).is_none() {
                out.error(
                    "CHANNEL_UNKNOWN_SUBJECT",
                    &loc,
                    format!("undeclared subject `{end}`"),
                );
            }
        }
        if c.message_types.is_empty() {
            out.error("EMPTY_CHANNEL", &loc, "channel carries no message types");
        }
        for m in &c.message_types {
            if model.message_type(m).is_none() {
                out.error(
                    "CHANNEL_UNKNOWN_MESSAGE",
                    &loc,
                    format!("undeclared message type `{m}`"),
                );
            }
        }
    }
}

fn check_behavior(model: &ProcessModel, b: &super::BehaviorDef, out: &mut Collector) {
    let bloc = format!("behavior {}", b.subject);
    let mut ids = BTreeSet::new();
    for s in &b.states {
        if !ids.insert(s.id.as_str()) {
            out.error(
                "DUPLICATE_STATE",
                format!("{bloc}/state {}", s.id),
                "state id declared twice",
            );
        }
    }
    if !b.states.iter().any(|s| s.is_start) {
        out.error("NO_START_STATE", &bloc, "behavior has no start state");
    }
    if !b.states.iter().any(|s| s.is_end) {
        out.error("NO_END_STATE", &bloc, "behavior has no end state");
    }
    for t in &b.transitions {
        for end in [&t.from, &t.to] {
            if b.state(end).is_none() {
                out.error(
                    "UNKNOWN_STATE",
                    format!("{bloc}/transition {} -> {}", t.from, t.to),
                    format!("undeclared state `{end}`"),
                );
            }
        }
    }

    for s in &b.states {
        let loc = format!("{bloc}/state {}", s.id);
        let outgoing: Vec<_> = b.outgoing(&s.id).collect();
        if s.is_end && !outgoing.is_empty() {
            out.error(
                "END_STATE_HAS_TRANSITIONS",
                &loc,
                "end states have no outgoing transitions",
            );
        }
        if !s.is_end && outgoing.is_empty() {
            out.error(
                "DEAD_END_STATE",
                &loc,
                "non-end state has no outgoing transition",
            );
        }

        let timeouts = outgoing.iter().filter(|t| t.trigger.is_timeout()).count();
        if timeouts > 0 && s.kind == StateKind::Function {
            out.error(
                "TIMEOUT_NOT_ALLOWED",
                &loc,
                "timeouts belong to send and receive states",
            );
        }
        if timeouts > 1 {
            out.error(
                "MULTIPLE_TIMEOUTS",
                &loc,
                "at most one timeout transition per state",
            );
        }

        let mut branch_labels = BTreeSet::new();
        let mut receive_arms: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        let mut receive_targets: BTreeMap<&str, Vec<(&str, &str)>> = BTreeMap::new();
        let mut send_recipients = BTreeSet::new();
        let mut arms = 0;

        for t in &outgoing {
            match (&t.trigger, s.kind) {
                (Trigger::Timeout { .. }, _) => continue,
                (Trigger::Branch { label }, StateKind::Function) => {
                    if !branch_labels.insert(label.as_str()) {
                        out.error(
                            "DUPLICATE_BRANCH",
                            &loc,
                            format!("branch `{label}` repeated"),
                        );
                    }
                }
                (
                    Trigger::Send {
                        message,
                        to,
                        cardinality,
                    },
                    StateKind::Send,
                ) => {
                    arms += 1;
                    if !model.channel_permits(&b.subject, to, message) {
                        out.error(
                            "NO_CHANNEL",
                            &loc,
                            format!("no channel {} -> {to} carries `{message}`", b.subject),
                        );
                    }
                    if !send_recipients.insert(to.as_str()) {
                        out.error(
                            "SEND_ARM_CONFLICT",
                            &loc,
                            format!("two send transitions address `{to}`"),
                        );
                    }
                    check_cardinality(model, to, *cardinality, &loc, out);
                }
                (Trigger::Receive { message, from }, StateKind::Receive) => {
                    arms += 1;
                    if !model.channel_permits(from, &b.subject, message) {
                        out.error(
                            "NO_CHANNEL",
                            &loc,
                            format!("no channel {from} -> {} carries `{message}`", b.subject),
                        );
                    }
                    *receive_arms.entry((message, from)).or_default() += 1;
                    receive_targets
                        .entry(message)
                        .or_default()
                        .push((from, t.to.as_str()));
                }
                (trigger, kind) => out.error(
                    "TRIGGER_KIND_MISMATCH",
                    &loc,
                    format!("{} trigger on a {kind} state", trigger_name(trigger)),
                ),
            }
        }

        for ((message, from), n) in &receive_arms {
            if *n > 1 {
                out.error(
                    "DUPLICATE_RECEIVE_ARM",
                    &loc,
                    format!("`{message}` from `{from}` accepted by {n} transitions"),
                );
            }
        }
        for (message, arms) in &receive_targets {
            let senders: BTreeSet<_> = arms.iter().map(|(f, _)| *f).collect();
            if senders.len() < 2 {
                continue;
            }
            let mut by_target: BTreeMap<&str, usize> = BTreeMap::new();
            for (_, to) in arms {
                *by_target.entry(to).or_default() += 1;
            }
            if by_target.values().any(|n| *n > 1) {
                out.warn(
                    "AMBIGUOUS_RECEIVE",
                    &loc,
                    format!("`{message}` from several senders leads to the same state"),
                );
            }
        }
        if !s.is_end && arms == 0 && timeouts > 0 {
            let rule = match s.kind {
                StateKind::Receive => Some("RECEIVE_WITHOUT_ARMS"),
                StateKind::Send => Some("SEND_WITHOUT_ARMS"),
                StateKind::Function => None,
            };
            if let Some(rule) = rule {
                out.warn(rule, &loc, "only a timeout leaves this state");
            }
        }
    }

    let reachable: BTreeSet<&str> = b.reachable_states().iter().map(|s| s.id.as_str()).collect();
    for s in &b.states {
        if !reachable.contains(s.id.as_str()) {
            out.warn(
                "UNREACHABLE_STATE",
                format!("{bloc}/state {}", s.id),
                "state cannot be reached from a start state",
            );
        }
    }
}

fn check_cardinality(
    model: &ProcessModel,
    to: &str,
    card: Cardinality,
    loc: &str,
    out: &mut Collector,
) {
    let Some(subject) = model.subject(to) else {
        return;
    };
    match card {
        Cardinality::One => {}
        _ if !subject.is_multi() => out.error(
            "BAD_CARDINALITY",
            loc,
            format!("fan-out to `{to}` which is not a multi-subject"),
        ),
        Cardinality::All => {}
        Cardinality::Choose { min, max } => {
            if min < 1 || min > max || min > subject.max_instances {
                out.error(
                    "BAD_CARDINALITY",
                    loc,
                    format!(
                        "choose({min}, {max}) is unsatisfiable for {} instances",
                        subject.max_instances
                    ),
                );
            }
        }
    }
}

fn trigger_name(t: &Trigger) -> &'static str {
    match t {
        Trigger::Branch { .. } => "branch",
        Trigger::Send { .. } => "send",
        Trigger::Receive { .. } => "receive",
        Trigger::Timeout { .. } => "timeout",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::*;

    fn send_receive() -> ProcessModel {
        let mut m = ProcessModel::new("SendReceive");
        m.subjects = vec![
            SubjectDef::single("Customer"),
            SubjectDef::single("Supplier"),
        ];
        m.message_types = vec![
            MessageTypeDef::new("Order"),
            MessageTypeDef::new("Confirmation"),
        ];
        m.channels = vec![
            ChannelDef::new("Customer", "Supplier", ["Order"]),
            ChannelDef::new("Supplier", "Customer", ["Confirmation"]),
        ];
        let mut c = BehaviorDef::new("Customer");
        c.states = vec![
            StateDef::new("fill", "Fill out order", StateKind::Function).start(),
            StateDef::new("send", "Send order", StateKind::Send),
            StateDef::new("wait", "Receive confirmation", StateKind::Receive),
            StateDef::new("done", "Done", StateKind::Function).end(),
        ];
        c.transitions = vec![
            TransitionDef::branch("fill", "done", "send"),
            TransitionDef::send("send", "Order", "Supplier", Cardinality::One, "wait"),
            TransitionDef::receive("wait", "Confirmation", "Supplier", "done"),
        ];
        let mut s = BehaviorDef::new("Supplier");
        s.states = vec![
            StateDef::new("wait", "Receive order", StateKind::Receive).start(),
            StateDef::new("eval", "Evaluate order", StateKind::Function),
            StateDef::new("send", "Send confirmation", StateKind::Send),
            StateDef::new("done", "Done", StateKind::Function).end(),
        ];
        s.transitions = vec![
            TransitionDef::receive("wait", "Order", "Customer", "eval"),
            TransitionDef::branch("eval", "OK", "send"),
            TransitionDef::send("send", "Confirmation", "Customer", Cardinality::One, "done"),
        ];
        m.behaviors = vec![c, s];
        m
    }

    #[test]
    fn clean_model_has_empty_report() {
        assert_eq!(validate(&send_receive()), ValidationReport::default());
    }

    #[test]
    fn empty_model_is_vacuously_valid() {
        assert!(validate(&ProcessModel::new("P")).is_empty());
    }

    #[test]
    fn missing_end_state_is_reported() {
        let mut m = send_receive();
        m.behaviors[0].states[3].is_end = false;
        m.behaviors[0]
            .transitions
            .push(TransitionDef::branch("done", "x", "fill"));
        let report = validate(&m);
        assert!(report.contains("NO_END_STATE"), "{report}");
    }

    #[test]
    fn missing_behavior_and_external_behavior() {
        let mut m = send_receive();
        m.subjects.push(SubjectDef::single("Ghost"));
        m.subjects[0].kind = SubjectKind::External;
        let report = validate(&m);
        assert!(report.contains("MISSING_BEHAVIOR"));
        assert!(report.contains("EXTERNAL_WITH_BEHAVIOR"));
    }

    #[test]
    fn send_without_channel() {
        let mut m = send_receive();
        m.channels.remove(0);
        let report = validate(&m);
        assert_eq!(report.rules(), vec!["NO_CHANNEL", "NO_CHANNEL"]);
    }

    #[test]
    fn timeout_on_function_state_rejected() {
        let mut m = send_receive();
        m.behaviors[0]
            .transitions
            .push(TransitionDef::timeout("fill", 10, "done"));
        assert!(validate(&m).contains("TIMEOUT_NOT_ALLOWED"));
        m.behaviors[0]
            .transitions
            .push(TransitionDef::timeout("wait", 10, "done"));
        m.behaviors[0]
            .transitions
            .push(TransitionDef::timeout("wait", 20, "done"));
        assert!(validate(&m).contains("MULTIPLE_TIMEOUTS"));
    }

    #[test]
    fn receive_only_timeout_is_a_warning() {
        let mut m = send_receive();
        m.behaviors[0].transitions[2] = TransitionDef::timeout("wait", 5000, "done");
        let report = validate(&m);
        assert_eq!(report.rules(), vec!["RECEIVE_WITHOUT_ARMS"]);
        assert!(!report.has_errors());
    }

    #[test]
    fn unreachable_state_warns() {
        let mut m = send_receive();
        m.behaviors[1]
            .states
            .push(StateDef::new("island", "Island", StateKind::Function).end());
        let report = validate(&m);
        assert_eq!(report.rules(), vec!["UNREACHABLE_STATE"]);
    }

    #[test]
    fn ambiguous_receive_when_successors_coincide() {
        let mut m = send_receive();
        m.subjects.push(SubjectDef::single("Other"));
        let mut o = BehaviorDef::new("Other");
        o.states = vec![
            StateDef::new("s", "Send", StateKind::Send).start(),
            StateDef::new("e", "End", StateKind::Function).end(),
        ];
        o.transitions = vec![TransitionDef::send(
            "s",
            "Confirmation",
            "Customer",
            Cardinality::One,
            "e",
        )];
        m.behaviors.push(o);
        m.channels
            .push(ChannelDef::new("Other", "Customer", ["Confirmation"]));
        m.behaviors[0].transitions.push(TransitionDef::receive(
            "wait",
            "Confirmation",
            "Other",
            "done",
        ));
        assert_eq!(validate(&m).rules(), vec!["AMBIGUOUS_RECEIVE"]);
        m.behaviors[0].transitions.last_mut().unwrap().to = "fill".into();
        assert!(validate(&m).is_empty());
    }

    #[test]
    fn fan_out_needs_multi_subject() {
        let mut m = send_receive();
        m.behaviors[0].transitions[1] =
            TransitionDef::send("send", "Order", "Supplier", Cardinality::All, "wait");
        assert!(validate(&m).contains("BAD_CARDINALITY"));
    }

    #[test]
    fn validate_is_deterministic() {
        let mut m = send_receive();
        m.subjects.push(SubjectDef::multi("Bad", 1));
        assert_eq!(validate(&m), validate(&m));
    }
}
