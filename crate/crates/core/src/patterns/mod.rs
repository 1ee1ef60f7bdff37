//! The service interaction pattern corpus: models, decider scripts and
//! frozen traces, embedded at build time from the repository `corpus/`.
//!
//! A case is identified by `name` or `name.variant`. Variants share the
//! pattern's model unless they ship their own source (analysis-only
//! variants with a modified model have no script).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::engine::{first_difference, from_jsonl, to_jsonl, AgentStatus, TraceRecord};
use crate::model::{ValidModel, ValidationReport};
use crate::pdl::{self, ParseError};
use crate::tasks::{run_scripted, Cluster, DeciderScript, DriverError, LocalCluster, RunOutcome};

macro_rules! corpus_file {
    ($($part:expr),+) => {
        include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../corpus/", $($part),+))
    };
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    name: &'static str,
    variant: Option<&'static str>,
    source: &'static str,
    script: Option<&'static str>,
    golden: Option<&'static str>,
    note: &'static str,
}

macro_rules! entry {
    ($name:literal, $note:literal) => {
        Entry {
            name: $name,
            variant: None,
            source: corpus_file!($name, ".sbpm"),
            script: Some(corpus_file!($name, ".script.json")),
            golden: Some(corpus_file!($name, ".golden.jsonl")),
            note: $note,
        }
    };
    ($name:literal . $variant:literal, $note:literal) => {
        Entry {
            name: $name,
            variant: Some($variant),
            source: corpus_file!($name, ".sbpm"),
            script: Some(corpus_file!($name, ".", $variant, ".script.json")),
            golden: Some(corpus_file!($name, ".", $variant, ".golden.jsonl")),
            note: $note,
        }
    };
}

const ENTRIES: &[Entry] = &[
    entry!(
        "send_receive",
        "X sends a request to Y and receives the response"
    ),
    entry!(
        "racing",
        "C receives one of two notifications and discards the other"
    ),
    entry!("racing"."latest", "C picks the notification that arrived last"),
    entry!(
        "one_to_many_send_receive",
        "offers to 4 customers, continue once 3 of 4 (75%) confirmed"
    ),
    entry!("one_to_many_send_receive"."all", "all 4 customers confirm"),
    entry!("one_to_many_send_receive"."quorum_missed", "only 2 of 4 confirm"),
    entry!("multi_responses", "responses are accepted for five seconds"),
    Entry {
        name: "multi_responses",
        variant: Some("forever"),
        source: corpus_file!("multi_responses.sbpm"),
        script: Some(corpus_file!("multi_responses.forever.script.json")),
        golden: None,
        note: "the supplier never stops sending",
    },
    Entry {
        name: "multi_responses",
        variant: Some("no_timer"),
        source: corpus_file!("multi_responses.no_timer.sbpm"),
        script: None,
        golden: None,
        note: "recipient without its five second timer",
    },
    entry!(
        "contingent_request",
        "B stays silent, the customer falls back to A"
    ),
    entry!("contingent_request"."b_answers", "B answers within the window"),
    entry!("contingent_request"."both_silent", "neither supplier answers"),
    entry!("contingent_request"."b_late", "B answers after the window, A answers in time"),
    entry!("atomic_multicast", "all three suppliers offer in time"),
    entry!("atomic_multicast"."one_withholds", "one supplier withholds its offer"),
    entry!(
        "request_with_referral",
        "supplier forwards, transport confirms"
    ),
    entry!("request_with_referral"."supplier_error", "supplier rejects the request"),
    entry!("request_with_referral"."transport_error", "transport rejects the request"),
    entry!(
        "relayed_request",
        "agency relays to 3 contractors, all confirm"
    ),
    entry!("relayed_request"."one_error", "one contractor reports an error"),
    entry!("dynamic_routing", "warehouse routes via the customer"),
    entry!("dynamic_routing"."ship_direct", "warehouse ships directly"),
    entry!("send", "a single message, degenerate send/receive"),
    entry!(
        "receive",
        "a message from an external partner, degenerate send/receive"
    ),
    entry!(
        "one_to_many_send",
        "one message to every receiver, degenerate one-to-many"
    ),
    entry!(
        "one_from_many_receive",
        "messages from many senders, degenerate multi-responses"
    ),
    Entry {
        name: "racing",
        variant: Some("no_discard"),
        source: corpus_file!("racing.no_discard.sbpm"),
        script: None,
        golden: None,
        note: "C without its discard step",
    },
];

/// Names of the thirteen patterns, in corpus order.
pub const PATTERNS: [&str; 13] = [
    "send_receive",
    "racing",
    "one_to_many_send_receive",
    "multi_responses",
    "contingent_request",
    "atomic_multicast",
    "request_with_referral",
    "relayed_request",
    "dynamic_routing",
    "send",
    "receive",
    "one_to_many_send",
    "one_from_many_receive",
];

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("no corpus case `{0}`")]
    Unknown(String),
    #[error("{case}: {error}")]
    Parse { case: String, error: ParseError },
    #[error("{case}: model does not validate:\n{report}")]
    Invalid {
        case: String,
        report: ValidationReport,
    },
    #[error("{case}: bad script: {error}")]
    Script {
        case: String,
        error: serde_json::Error,
    },
    #[error("{case}: bad golden trace: {error}")]
    Golden {
        case: String,
        error: serde_json::Error,
    },
    #[error("{0}: no script to run")]
    NotRunnable(String),
}

#[derive(Debug, Clone)]
pub struct PatternCase {
    pub name: String,
    pub variant: Option<String>,
    pub note: String,
    pub source: String,
    pub model: ValidModel,
    pub script: Option<DeciderScript>,
    pub golden: Option<Vec<TraceRecord>>,
}

impl PatternCase {
    /// `name` or `name.variant`.
    pub fn id(&self) -> String {
        match &self.variant {
            Some(v) => format!("{}.{v}", self.name),
            None => self.name.clone(),
        }
    }

    /// Repository-relative path of the golden trace.
    pub fn golden_path(&self) -> String {
        format!("corpus/{}.golden.jsonl", self.id())
    }

    pub fn starters(&self) -> BTreeMap<String, u32> {
        self.script
            .as_ref()
            .map(|s| s.starters.clone())
            .unwrap_or_else(|| crate::analysis::default_starters(&self.model))
    }
}

/// Parses source text and validates it, naming `case` in errors.
pub fn load_model(case: &str, source: &str) -> Result<ValidModel, CaseError> {
    let model = pdl::parse(source).map_err(|error| CaseError::Parse {
        case: case.into(),
        error,
    })?;
    model.into_valid().map_err(|report| CaseError::Invalid {
        case: case.into(),
        report,
    })
}

fn load(e: &Entry) -> Result<PatternCase, CaseError> {
    let id = match e.variant {
        Some(v) => format!("{}.{v}", e.name),
        None => e.name.to_string(),
    };
    let model = load_model(&id, e.source)?;
    let script = e
        .script
        .map(DeciderScript::from_json)
        .transpose()
        .map_err(|error| CaseError::Script {
            case: id.clone(),
            error,
        })?;
    let golden = e
        .golden
        .map(from_jsonl)
        .transpose()
        .map_err(|error| CaseError::Golden {
            case: id.clone(),
            error,
        })?;
    Ok(PatternCase {
        name: e.name.into(),
        variant: e.variant.map(Into::into),
        note: e.note.into(),
        source: e.source.into(),
        model,
        script,
        golden,
    })
}

/// The thirteen pattern cases.
pub fn corpus() -> Vec<PatternCase> {
    ENTRIES
        .iter()
        .filter(|e| e.variant.is_none())
        .map(|e| load(e).expect("embedded corpus is valid"))
        .collect()
}

/// Every case, variants included.
pub fn all_cases() -> Vec<PatternCase> {
    ENTRIES
        .iter()
        .map(|e| load(e).expect("embedded corpus is valid"))
        .collect()
}

/// Looks a case up by `name` or `name.variant`. `one_to_many` is accepted
/// for `one_to_many_send_receive`.
pub fn case(id: &str) -> Result<PatternCase, CaseError> {
    let id = match id.strip_prefix("one_to_many") {
        Some(rest) if rest.is_empty() || rest.starts_with('.') => {
            format!("one_to_many_send_receive{rest}")
        }
        _ => id.to_string(),
    };
    let (name, variant) = match id.split_once('.') {
        Some((n, v)) => (n, Some(v)),
        None => (id.as_str(), None),
    };
    ENTRIES
        .iter()
        .find(|e| e.name == name && e.variant == variant)
        .ok_or_else(|| CaseError::Unknown(id.clone()))
        .and_then(load)
}

/// Why a case failed.
#[derive(Debug, Clone, PartialEq)]
pub enum Mismatch {
    Trace {
        index: usize,
        expected: Option<TraceRecord>,
        actual: Option<TraceRecord>,
    },
    Statuses {
        expected: BTreeMap<String, AgentStatus>,
        actual: BTreeMap<String, AgentStatus>,
    },
    Residue {
        expected: BTreeMap<String, Vec<(String, String)>>,
        actual: BTreeMap<String, Vec<(String, String)>>,
    },
    Error {
        expected: Option<String>,
        actual: Option<String>,
    },
    NoGolden,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |r: &Option<TraceRecord>| match r {
            Some(r) => serde_json::to_string(r).unwrap_or_default(),
            None => "<end of trace>".into(),
        };
        match self {
            Mismatch::Trace {
                index,
                expected,
                actual,
            } => write!(
                f,
                "trace differs at record {}\n  expected: {}\n  actual:   {}",
                index + 1,
                show(expected),
                show(actual)
            ),
            Mismatch::Statuses { expected, actual } => {
                write!(
                    f,
                    "final statuses differ\n  expected: {expected:?}\n  actual:   {actual:?}"
                )
            }
            Mismatch::Residue { expected, actual } => {
                write!(
                    f,
                    "pool residue differs\n  expected: {expected:?}\n  actual:   {actual:?}"
                )
            }
            Mismatch::Error { expected, actual } => write!(
                f,
                "run outcome differs\n  expected: {}\n  actual:   {}",
                expected.as_deref().unwrap_or("quiescence"),
                actual.as_deref().unwrap_or("quiescence")
            ),
            Mismatch::NoGolden => f.write_str("no golden trace"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub case: String,
    pub outcome: Result<RunOutcome, DriverError>,
    pub mismatch: Option<Mismatch>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.mismatch.is_none()
    }

    /// One line: `PASS name` or `FAIL name: ...`.
    pub fn line(&self) -> String {
        match &self.mismatch {
            None => format!("PASS {}", self.case),
            Some(m) => format!("FAIL {}: {m}", self.case),
        }
    }
}

/// Runs a case on a single in-process node.
pub fn run_case(case: &PatternCase) -> Result<CaseReport, CaseError> {
    let mut cluster = LocalCluster::new(case.model.clone());
    run_case_on(case, &mut cluster)
}

/// Runs a case on any cluster and compares the logical trace, statuses and
/// residue with what the corpus expects.
pub fn run_case_on<C: Cluster>(
    case: &PatternCase,
    cluster: &mut C,
) -> Result<CaseReport, CaseError> {
    let script = case
        .script
        .as_ref()
        .ok_or_else(|| CaseError::NotRunnable(case.id()))?;
    let outcome = run_scripted(cluster, script);
    let mismatch = check(case, script, &outcome);
    Ok(CaseReport {
        case: case.id(),
        outcome,
        mismatch,
    })
}

fn check(
    case: &PatternCase,
    script: &DeciderScript,
    outcome: &Result<RunOutcome, DriverError>,
) -> Option<Mismatch> {
    let expect = &script.expect;
    let out = match outcome {
        Err(e) if expect.error.as_deref() == Some(e.code()) => return None,
        Err(e) => {
            return Some(Mismatch::Error {
                expected: expect.error.clone(),
                actual: Some(format!("{}: {e}", e.code())),
            })
        }
        Ok(_) if expect.error.is_some() => {
            return Some(Mismatch::Error {
                expected: expect.error.clone(),
                actual: None,
            })
        }
        Ok(out) => out,
    };
    let Some(golden) = &case.golden else {
        return Some(Mismatch::NoGolden);
    };
    if let Some((index, e, a)) = first_difference(golden, &out.trace) {
        return Some(Mismatch::Trace {
            index,
            expected: e.cloned(),
            actual: a.cloned(),
        });
    }
    if !expect.statuses.is_empty() && expect.statuses != out.statuses {
        return Some(Mismatch::Statuses {
            expected: expect.statuses.clone(),
            actual: out.statuses.clone(),
        });
    }
    if expect.residue != out.residue {
        return Some(Mismatch::Residue {
            expected: expect.residue.clone(),
            actual: out.residue.clone(),
        });
    }
    None
}

/// The logical trace a fresh run of `case` produces, as golden text.
pub fn bless(case: &PatternCase) -> Result<String, CaseError> {
    let report = run_case(case)?;
    match report.outcome {
        Ok(out) => Ok(to_jsonl(&out.trace)),
        Err(_) => Ok(String::new()),
    }
}

#[cfg(test)]
mod tests;
