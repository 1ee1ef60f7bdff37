use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng;
use uuid::Uuid;

use crate::engine::{AgentStatus, Choice, Engine, Record, RecordKind};
use crate::host::{Host, HostConfig, HostError};
use crate::patterns::PatternCase;
use crate::tasks::{Task, TaskError, TaskFilter, TaskOptions};

/// What a random run did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WalkStats {
    pub commands: usize,
    pub decisions: usize,
    pub stale_attempts: usize,
    pub retries: usize,
    pub quiescent: bool,
}

/// A legal choice for `task`, picked at random.
pub fn random_choice<R: Rng>(rng: &mut R, task: &Task) -> Option<Choice> {
    match &task.options {
        TaskOptions::Branch { labels } => labels.choose(rng).cloned().map(Choice::Branch),
        TaskOptions::PickMessage { messages } => messages
            .choose(rng)
            .map(|m| Choice::PickMessage(m.envelope)),
        TaskOptions::Payload { .. } => Some(Choice::Payload(Record::new())),
        TaskOptions::SendTargets { arms } => {
            let arm = arms.choose(rng)?;
            let most = (arm.max as usize).min(arm.eligible.len());
            let least = (arm.min as usize).max(1);
            if least > most {
                return None;
            }
            let n = rng.gen_range(least..=most);
            let targets = arm.eligible.choose_multiple(rng, n).cloned().collect();
            Some(Choice::SendTargets {
                targets,
                payload: Record::new(),
            })
        }
    }
}

/// Incremental checks over one instance's trace.
#[derive(Default)]
struct Checker {
    seen: usize,
    picked: BTreeSet<Uuid>,
    emitted: BTreeSet<Uuid>,
    completed: BTreeSet<String>,
    position: BTreeMap<String, String>,
}

impl Checker {
    fn check(&mut self, host: &Host, id: Uuid) -> Result<(), String> {
        let engine = host.instance(id).ok_or("instance vanished")?;
        for r in &engine.trace()[self.seen..] {
            let moves = matches!(r.kind, RecordKind::Decision | RecordKind::Timer);
            if moves && self.completed.contains(&r.agent) {
                return Err(format!(
                    "completed agent {} acted at seq {}",
                    r.agent, r.seq
                ));
            }
            if moves {
                let state = r.detail["state"].as_str().unwrap_or_default();
                if let Some(at) = self.position.get(&r.agent) {
                    if at != state {
                        return Err(format!(
                            "{} left `{state}` at seq {} while in `{at}`",
                            r.agent, r.seq
                        ));
                    }
                }
                let next = r.detail["next"].as_str().unwrap_or_default();
                self.position.insert(r.agent.clone(), next.to_string());
            }
            if r.kind == RecordKind::Decision {
                if let Some(env) = r.detail["choice"]["pick_message"].as_str() {
                    let env: Uuid = env.parse().map_err(|_| "bad envelope id in trace")?;
                    if !self.picked.insert(env) {
                        return Err(format!("envelope {env} consumed twice"));
                    }
                }
                for e in r.detail["envelopes"].as_array().into_iter().flatten() {
                    if let Some(id) = e["id"].as_str().and_then(|s| s.parse().ok()) {
                        self.emitted.insert(id);
                    }
                }
            }
        }
        self.seen = engine.trace().len();

        conservation(engine, &self.picked)?;
        let parked: BTreeSet<Uuid> = host
            .pending_retries()
            .iter()
            .map(|r| r.envelope)
            .chain(host.dead_letters().iter().map(|d| d.envelope.id))
            .collect();
        for e in &self.emitted {
            if !engine.delivered_ids().contains(e) && !parked.contains(e) {
                return Err(format!("envelope {e} was sent but is nowhere"));
            }
        }

        for a in engine.agents() {
            let name = a.agent_ref().to_string();
            if self.completed.contains(&name) && a.status != AgentStatus::Completed {
                return Err(format!("{name} left the completed status"));
            }
            if a.status == AgentStatus::Completed {
                self.completed.insert(name);
            }
        }
        Ok(())
    }
}

/// Every delivered envelope is consumed exactly once or still in a pool.
fn conservation(engine: &Engine, picked: &BTreeSet<Uuid>) -> Result<(), String> {
    let delivered = engine.delivered_ids();
    let consumed = engine.consumed_ids();
    if consumed != picked {
        return Err("engine and trace disagree on consumed envelopes".into());
    }
    let mut pooled = BTreeSet::new();
    for a in engine.agents() {
        for e in &a.pool.entries {
            if !pooled.insert(e.id) {
                return Err(format!("envelope {} sits in two pools", e.id));
            }
            if consumed.contains(&e.id) {
                return Err(format!("consumed envelope {} is still pooled", e.id));
            }
        }
    }
    let accounted: BTreeSet<Uuid> = consumed.union(&pooled).copied().collect();
    if &accounted != delivered {
        let lost: Vec<_> = delivered.difference(&accounted).collect();
        let extra: Vec<_> = accounted.difference(delivered).collect();
        return Err(format!("lost {lost:?}, never delivered {extra:?}"));
    }
    Ok(())
}

/// Runs `case` with random legal decisions and random clock moves,
/// checking after every command that no message is lost or consumed twice,
/// that completion is absorbing and that a timer and a decision never both
/// leave the same state visit. Old tasks are retried now and then; once a
/// timer has moved their agent on they must be refused as stale. A small
/// `pool_capacity` makes deliveries bounce and go through retries.
pub fn random_walk<R: Rng>(
    rng: &mut R,
    case: &PatternCase,
    pool_capacity: usize,
    max_commands: usize,
) -> Result<WalkStats, String> {
    let mut host = Host::new(HostConfig {
        pool_capacity,
        ..HostConfig::default()
    });
    host.register(case.model.clone());
    let id = host
        .start(&case.model.name, &case.starters(), None)
        .map_err(|e| e.to_string())?;
    let mut injections: Vec<_> = case
        .script
        .as_ref()
        .map(|s| s.inject.clone())
        .unwrap_or_default();
    injections.sort_by_key(|i| std::cmp::Reverse(i.at_ms));

    let filter = TaskFilter {
        instance: Some(id),
        ..TaskFilter::default()
    };
    let mut stats = WalkStats::default();
    let mut checker = Checker::default();
    let mut old: Vec<Task> = Vec::new();
    checker.check(&host, id)?;

    while stats.commands < max_commands {
        let now = host.now();
        if injections.last().is_some_and(|i| i.at_ms <= now) {
            let i = injections.pop().expect("checked");
            host.inject(id, i.from, i.to, &i.message_type, i.payload)
                .map_err(|e| format!("injection refused: {e}"))?;
            stats.commands += 1;
            checker.check(&host, id)?;
            continue;
        }

        let tasks = host.tasks(&filter);
        let roll: f64 = rng.gen();
        if roll < 0.1 && !old.is_empty() {
            let task = old.choose(rng).expect("nonempty").clone();
            if !tasks.iter().any(|t| t.id == task.id) {
                if let Some(choice) = random_choice(rng, &task) {
                    match host.complete(task.id, choice) {
                        Err(HostError::Task(TaskError::StaleTask(_))) => stats.stale_attempts += 1,
                        Ok(_) => return Err(format!("settled task {} completed again", task.id)),
                        Err(e) => return Err(format!("settled task {} gave {e}", task.id)),
                    }
                }
                continue;
            }
        }
        if roll < 0.75 && !tasks.is_empty() {
            let task = tasks.iter().choose(rng).expect("nonempty");
            if let Some(choice) = random_choice(rng, task) {
                host.complete(task.id, choice.clone()).map_err(|e| {
                    format!("legal choice {choice:?} for {} refused: {e}", task.agent)
                })?;
                stats.commands += 1;
                stats.decisions += 1;
                old.push(task.clone());
                checker.check(&host, id)?;
                continue;
            }
        }

        let scheduled = host
            .next_stop()
            .into_iter()
            .chain(injections.last().map(|i| i.at_ms))
            .filter(|t| *t > now)
            .min();
        if tasks.is_empty() && scheduled.is_none() {
            stats.quiescent = true;
            break;
        }
        let to = match scheduled {
            Some(t) if rng.gen_bool(0.5) => t,
            _ => now + rng.gen_range(1..=6000),
        };
        old.extend(tasks);
        host.advance_to(to).map_err(|e| e.to_string())?;
        host.fire_due_timers();
        let (flushed, _) = host.flush_retries();
        stats.commands += 1 + flushed;
        stats.retries += flushed;
        checker.check(&host, id)?;
    }
    Ok(stats)
}
