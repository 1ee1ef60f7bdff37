//! Envelope routing: wire frames, the routing table and the retry policy.
//! The socket transport itself lives in the node crate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::engine::Envelope;
use crate::model::{ProcessModel, SubjectKind};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_BUS_PORT: u16 = 7471;

pub const RETRY_BASE_MS: u64 = 100;
pub const RETRY_FACTOR: u64 = 2;
pub const RETRY_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NackReason {
    UnknownProcess,
    UnknownSubject,
    PoolFull,
    BadFrame,
}

impl NackReason {
    pub fn as_str(self) -> &'static str {
        match self {
            NackReason::UnknownProcess => "UNKNOWN_PROCESS",
            NackReason::UnknownSubject => "UNKNOWN_SUBJECT",
            NackReason::PoolFull => "POOL_FULL",
            NackReason::BadFrame => "BAD_FRAME",
        }
    }
}

impl fmt::Display for NackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Envelope,
    Ack,
    Nack,
}

/// One NDJSON line on the bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireFrame {
    pub v: u32,
    pub kind: FrameKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<Envelope>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Uuid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<NackReason>,
}

impl WireFrame {
    pub fn envelope(e: Envelope) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: FrameKind::Envelope,
            envelope: Some(e),
            reference: None,
            reason: None,
        }
    }

    pub fn ack(reference: Uuid) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: FrameKind::Ack,
            envelope: None,
            reference: Some(reference),
            reason: None,
        }
    }

    pub fn nack(reference: Option<Uuid>, reason: NackReason) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: FrameKind::Nack,
            envelope: None,
            reference,
            reason: Some(reason),
        }
    }

    /// One line without the trailing newline. JSON string escaping keeps
    /// newlines in payloads off the wire.
    pub fn encode(&self) -> String {
        serde_json::to_string(self).expect("frames serialize")
    }

    /// Parses and checks one line. On failure returns the envelope id if
    /// one could be recovered, for the nack.
    pub fn decode(line: &str) -> Result<Self, Option<Uuid>> {
        let raw: serde_json::Value = serde_json::from_str(line).map_err(|_| None)?;
        let id = raw
            .get("envelope")
            .and_then(|e| e.get("id"))
            .and_then(|i| i.as_str())
            .and_then(|s| Uuid::parse_str(s).ok());
        let frame: WireFrame = serde_json::from_value(raw).map_err(|_| id)?;
        let well_formed = frame.v == PROTOCOL_VERSION
            && match frame.kind {
                FrameKind::Envelope => frame.envelope.is_some(),
                FrameKind::Ack => frame.reference.is_some(),
                FrameKind::Nack => frame.reason.is_some(),
            };
        if well_formed {
            Ok(frame)
        } else {
            Err(id)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Peer {
    pub company: String,
    pub host: String,
    pub port: u16,
}

impl fmt::Display for Peer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.company, self.host, self.port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Local,
    Remote(Peer),
}

/// Where each subject of each known process lives, seen from one node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingTable {
    entries: BTreeMap<(String, String), Endpoint>,
}

/// Whether a node of `company` hosts `subject`. Untagged subjects are
/// hosted by whichever node runs them; a node without a company hosts every
/// internal subject.
pub fn hosts(company: Option<&str>, model: &ProcessModel, subject: &str) -> bool {
    match model.subject(subject) {
        Some(s) if s.kind != SubjectKind::External => match (company, s.company.as_deref()) {
            (Some(mine), Some(theirs)) => mine == theirs,
            _ => true,
        },
        _ => false,
    }
}

impl RoutingTable {
    pub fn add_process(&mut self, model: &ProcessModel, company: Option<&str>, peers: &[Peer]) {
        self.entries.retain(|(p, _), _| *p != model.name);
        for s in &model.subjects {
            let endpoint = if hosts(company, model, &s.name) {
                Some(Endpoint::Local)
            } else {
                s.company
                    .as_ref()
                    .and_then(|c| peers.iter().find(|p| &p.company == c))
                    .map(|p| Endpoint::Remote(p.clone()))
            };
            if let Some(e) = endpoint {
                self.entries.insert((model.name.clone(), s.name.clone()), e);
            }
        }
    }

    pub fn route(&self, process: &str, subject: &str) -> Option<&Endpoint> {
        self.entries
            .get(&(process.to_string(), subject.to_string()))
    }

    /// Subjects of `model` with no route from this node.
    pub fn unrouted<'a>(&self, model: &'a ProcessModel) -> Vec<&'a str> {
        model
            .subjects
            .iter()
            .filter(|s| self.route(&model.name, &s.name).is_none())
            .map(|s| s.name.as_str())
            .collect()
    }
}

/// Why a delivery attempt failed. `None` reason means the connection failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    RetryAfter { delay_ms: u64, next_attempt: u32 },
    DeadLetter { attempts: u32 },
}

/// What to do after attempt number `attempt` (1-based) failed with
/// `reason` (`None` for a connection failure).
pub fn retry_policy(reason: Option<NackReason>, attempt: u32) -> Schedule {
    let retryable = matches!(reason, None | Some(NackReason::PoolFull));
    if retryable && attempt < RETRY_ATTEMPTS {
        Schedule::RetryAfter {
            delay_ms: RETRY_BASE_MS * RETRY_FACTOR.pow(attempt.saturating_sub(1)),
            next_attempt: attempt + 1,
        }
    } else {
        Schedule::DeadLetter { attempts: attempt }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_then_dead_letters() {
        let delays: Vec<_> = (1..=5)
            .map(|a| retry_policy(Some(NackReason::PoolFull), a))
            .collect();
        assert_eq!(
            delays,
            vec![
                Schedule::RetryAfter {
                    delay_ms: 100,
                    next_attempt: 2
                },
                Schedule::RetryAfter {
                    delay_ms: 200,
                    next_attempt: 3
                },
                Schedule::RetryAfter {
                    delay_ms: 400,
                    next_attempt: 4
                },
                Schedule::RetryAfter {
                    delay_ms: 800,
                    next_attempt: 5
                },
                Schedule::DeadLetter { attempts: 5 },
            ]
        );
        assert_eq!(retry_policy(None, 5), Schedule::DeadLetter { attempts: 5 });
    }

    #[test]
    fn unknown_targets_are_not_retried() {
        assert_eq!(
            retry_policy(Some(NackReason::UnknownSubject), 1),
            Schedule::DeadLetter { attempts: 1 }
        );
        assert_eq!(
            retry_policy(Some(NackReason::BadFrame), 1),
            Schedule::DeadLetter { attempts: 1 }
        );
    }

    #[test]
    fn version_gate() {
        let line = r#"{"v":2,"kind":"ack","ref":"00000000-0000-0000-0000-000000000000"}"#;
        assert_eq!(WireFrame::decode(line), Err(None));
        assert!(WireFrame::decode("not json").is_err());
        let ok = WireFrame::ack(Uuid::nil()).encode();
        assert_eq!(WireFrame::decode(&ok).unwrap(), WireFrame::ack(Uuid::nil()));
    }
}
