//! Property checks shared by the test suites: parser round trips, error
//! positions under mutation, randomized runs and exhaustive script
//! enumeration over the corpus.

mod generate;
mod walk;

use std::collections::BTreeMap;

use rand::Rng;

use crate::engine::{AgentStatus, RecordKind};
use crate::model::ValidModel;
use crate::patterns::{self, PatternCase};
use crate::pdl;
use crate::tasks::{run_scripted, LocalCluster, Rule, ScriptChoice};

pub use generate::{random_model, scramble};
pub use walk::{random_choice, random_walk, WalkStats};

/// Checks that `source` parses, validates and that its canonical text is a
/// fixpoint: parsing it gives the same model and printing that again gives
/// the same text.
pub fn check_round_trip(source: &str) -> Result<ValidModel, String> {
    let parsed = pdl::parse(source).map_err(|e| format!("parse: {e}"))?;
    let valid = parsed
        .clone()
        .into_valid()
        .map_err(|r| format!("invalid:\n{r}"))?;
    let canonical = pdl::serialize(&valid);
    let again =
        pdl::parse(&canonical).map_err(|e| format!("canonical text does not parse: {e}"))?;
    if again != parsed {
        return Err("canonical text parses to a different model".into());
    }
    let valid_again = again
        .into_valid()
        .map_err(|r| format!("canonical text does not validate:\n{r}"))?;
    let twice = pdl::serialize(&valid_again);
    if twice != canonical {
        return Err("serializing twice changes the text".into());
    }
    Ok(valid)
}

/// One single-character deletion and what the parser made of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deletion {
    /// Byte offset of the deleted character.
    pub at: usize,
    pub deleted: char,
    /// Offset of the reported error, if the mutant does not parse.
    pub reported: Option<usize>,
    /// Latest acceptable error offset: the start of the second token at or
    /// after `at` in the mutant.
    pub bound: usize,
}

impl Deletion {
    pub fn holds(&self) -> bool {
        self.reported.is_none_or(|r| r <= self.bound)
    }
}

/// Deletes the character at byte offset `at` and parses the rest.
pub fn delete_and_parse(source: &str, at: usize) -> Deletion {
    let deleted = source[at..].chars().next().expect("offset inside source");
    let mut mutant = String::with_capacity(source.len());
    mutant.push_str(&source[..at]);
    mutant.push_str(&source[at + deleted.len_utf8()..]);
    let offsets = pdl::token_offsets(&mutant);
    let first = offsets
        .iter()
        .position(|o| *o >= at)
        .unwrap_or(offsets.len().saturating_sub(1));
    let bound = offsets
        .get(first + 1)
        .or(offsets.last())
        .copied()
        .unwrap_or(mutant.len());
    Deletion {
        at,
        deleted,
        reported: pdl::parse(&mutant).err().map(|e| e.span.offset),
        bound,
    }
}

/// Offsets of the characters that belong to tokens: no whitespace, no
/// comments.
fn token_chars(source: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let (mut in_string, mut in_comment, mut escaped) = (false, false, false);
    for (i, c) in source.char_indices() {
        if in_comment {
            in_comment = c != '\n';
            continue;
        }
        if in_string {
            out.push(i);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '#' => in_comment = true,
            '"' => {
                in_string = true;
                out.push(i);
            }
            c if c.is_whitespace() => {}
            _ => out.push(i),
        }
    }
    out
}

/// `count` deletions of random token characters of the corpus files.
pub fn random_deletions<R: Rng>(rng: &mut R, count: usize) -> Vec<(String, Deletion)> {
    let cases = patterns::all_cases();
    (0..count)
        .map(|_| {
            let case = &cases[rng.gen_range(0..cases.len())];
            let starts = token_chars(&case.source);
            let at = starts[rng.gen_range(0..starts.len())];
            (case.id(), delete_and_parse(&case.source, at))
        })
        .collect()
}

/// What one supplier got at the end of an atomic multicast run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulticastRun {
    /// Per supplier: did it send an offer.
    pub answers: Vec<bool>,
    /// Per supplier: message types delivered to it after the request.
    pub outcome: Vec<Vec<String>>,
    pub statuses: BTreeMap<String, AgentStatus>,
}

impl MulticastRun {
    /// Every supplier got exactly one answer and all got the same one:
    /// `Confirmation` exactly when every supplier offered.
    pub fn all_or_nothing(&self) -> bool {
        let expected = if self.answers.iter().all(|a| *a) {
            "Confirmation"
        } else {
            "Error"
        };
        self.outcome
            .iter()
            .all(|o| o.len() == 1 && o[0] == expected)
    }
}

fn case_with_rules(id: &str, rules: Vec<Rule>) -> PatternCase {
    let mut case = patterns::case(id).expect("corpus case");
    let script = case.script.as_mut().expect("scripted case");
    let mut rules = rules;
    rules.append(&mut script.rules);
    script.rules = rules;
    script.expect = Default::default();
    case
}

fn branch_rule(subject: &str, index: u32, state: &str, answer: Option<&str>) -> Rule {
    Rule {
        subject: subject.into(),
        state: state.into(),
        index: Some(index),
        occurrence: Default::default(),
        at_ms: None,
        when_consumed: BTreeMap::new(),
        choice: match answer {
            Some(label) => ScriptChoice::Branch(label.into()),
            None => ScriptChoice::Withhold,
        },
        payload: Default::default(),
    }
}

/// Runs the atomic multicast with every answer/withhold combination of
/// its three suppliers.
pub fn atomic_multicast_runs() -> Result<Vec<MulticastRun>, String> {
    let mut runs = Vec::new();
    for mask in 0..8u32 {
        let answers: Vec<bool> = (0..3).map(|i| mask & (1 << i) != 0).collect();
        let rules = answers
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let label = if *a { "Offer" } else { "Withhold" };
                branch_rule("Supplier", i as u32, "process", Some(label))
            })
            .collect();
        let case = case_with_rules("atomic_multicast", rules);
        let script = case.script.clone().expect("scripted");
        let mut cluster = LocalCluster::new(case.model.clone());
        let out = run_scripted(&mut cluster, &script).map_err(|e| e.to_string())?;
        let outcome = (0..3)
            .map(|i| {
                let agent = format!("Supplier#{i}");
                out.trace
                    .iter()
                    .filter(|r| r.kind == RecordKind::Deliver && r.agent == agent)
                    .filter_map(|r| r.detail["type"].as_str())
                    .filter(|t| *t != "Request")
                    .map(String::from)
                    .collect()
            })
            .collect();
        runs.push(MulticastRun {
            answers,
            outcome,
            statuses: out.statuses,
        });
    }
    Ok(runs)
}

/// Runs the contingent request with each supplier answering or staying
/// silent, returning `(b answers, a answers, customer status, final state)`.
pub fn contingent_request_runs() -> Result<Vec<(bool, bool, AgentStatus, String)>, String> {
    let mut runs = Vec::new();
    for (b, a) in [(true, true), (true, false), (false, true), (false, false)] {
        let answer = |yes: bool| yes.then_some("Offer created");
        let rules = vec![
            branch_rule("SupplierB", 0, "create", answer(b)),
            branch_rule("SupplierA", 0, "create", answer(a)),
        ];
        let case = case_with_rules("contingent_request", rules);
        let script = case.script.clone().expect("scripted");
        let mut cluster = LocalCluster::new(case.model.clone());
        let out = run_scripted(&mut cluster, &script).map_err(|e| e.to_string())?;
        let status = out.statuses["Customer#0"];
        let engine = cluster
            .host()
            .instance(out.instance)
            .ok_or("instance vanished")?;
        let state = engine
            .agents()
            .find(|x| x.agent_ref().to_string() == "Customer#0")
            .map(|x| x.current_state.clone())
            .unwrap_or_default();
        runs.push((b, a, status, state));
    }
    Ok(runs)
}
