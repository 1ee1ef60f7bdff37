use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Decision,
    Deliver,
    Reject,
    Timer,
    Advance,
    Forward,
    Ack,
    Nack,
    Retry,
    DeadLetter,
    Duplicate,
}

impl RecordKind {
    /// Transport records describe how an envelope travelled, not what the
    /// process did. They are dropped when comparing runs across topologies.
    pub fn is_transport(self) -> bool {
        matches!(
            self,
            RecordKind::Forward
                | RecordKind::Ack
                | RecordKind::Nack
                | RecordKind::Retry
                | RecordKind::DeadLetter
                | RecordKind::Duplicate
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub at_ms: u64,
    pub kind: RecordKind,
    pub agent: String,
    pub detail: Json,
}

/// Logical records only, renumbered from 1.
pub fn logical(records: &[TraceRecord]) -> Vec<TraceRecord> {
    records
        .iter()
        .filter(|r| !r.kind.is_transport())
        .enumerate()
        .map(|(i, r)| TraceRecord {
            seq: i as u64 + 1,
            ..r.clone()
        })
        .collect()
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<TraceRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// First position where two traces differ, with the two records there.
pub fn first_difference<'a>(
    expected: &'a [TraceRecord],
    actual: &'a [TraceRecord],
) -> Option<(usize, Option<&'a TraceRecord>, Option<&'a TraceRecord>)> {
    let n = expected.len().max(actual.len());
    (0..n).find_map(|i| {
        let (e, a) = (expected.get(i), actual.get(i));
        (e != a).then_some((i, e, a))
    })
}
