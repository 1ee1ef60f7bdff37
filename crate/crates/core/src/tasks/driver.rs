use std::collections::BTreeMap;

use thiserror::Error;
use uuid::Uuid;

use crate::engine::{logical, AgentStatus, Choice, TraceRecord};
use crate::host::{Host, HostConfig, HostError};
use crate::model::ValidModel;

use super::script::{DeciderScript, Injection, Verdict};
use super::{Task, TaskFilter};

/// Commands a scripted run may apply before it is declared livelocked.
pub const COMMAND_CAP: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DriverError {
    #[error("run did not quiesce within {0} commands")]
    NonQuiescent(usize),
    #[error("nothing in the script decides {agent} in `{state}` (visit {occurrence})")]
    Unscripted {
        agent: String,
        state: String,
        occurrence: u32,
    },
    #[error("scripted choice for {agent} in `{state}` was rejected: {reason}")]
    Rejected {
        agent: String,
        state: String,
        reason: String,
    },
    #[error("{0}")]
    Cluster(String),
}

impl DriverError {
    pub fn code(&self) -> &'static str {
        match self {
            DriverError::NonQuiescent(_) => "NON_QUIESCENT",
            DriverError::Unscripted { .. } => "UNSCRIPTED",
            DriverError::Rejected { .. } => "REJECTED",
            DriverError::Cluster(_) => "CLUSTER",
        }
    }
}

impl From<HostError> for DriverError {
    fn from(e: HostError) -> Self {
        DriverError::Cluster(e.to_string())
    }
}

/// Final view of one instance across all nodes that run part of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Every record, transport included, in execution order.
    pub trace: Vec<TraceRecord>,
    pub statuses: BTreeMap<String, AgentStatus>,
    pub residue: BTreeMap<String, Vec<(String, String)>>,
}

/// One or more nodes running a single process instance, as seen by a driver.
pub trait Cluster {
    fn start(&mut self, starters: &BTreeMap<String, u32>) -> Result<Uuid, DriverError>;
    fn now(&mut self) -> Result<u64, DriverError>;
    /// Open tasks of the instance, ordered by `(created_at, agent)`.
    fn tasks(&mut self) -> Result<Vec<Task>, DriverError>;
    fn complete(&mut self, task: &Task, choice: Choice) -> Result<(), DriverError>;
    fn fire_due_timers(&mut self) -> Result<usize, DriverError>;
    fn flush_retries(&mut self) -> Result<usize, DriverError>;
    fn advance_to(&mut self, to: u64) -> Result<(), DriverError>;
    fn next_stop(&mut self) -> Result<Option<u64>, DriverError>;
    fn inject(&mut self, injection: &Injection) -> Result<(), DriverError>;
    fn snapshot(&mut self) -> Result<Snapshot, DriverError>;
}

/// A single in-process node hosting every subject.
pub struct LocalCluster {
    host: Host,
    process: String,
    instance: Option<Uuid>,
}

impl LocalCluster {
    pub fn new(model: ValidModel) -> Self {
        Self::with_config(model, HostConfig::default())
    }

    pub fn with_config(model: ValidModel, config: HostConfig) -> Self {
        let process = model.name.clone();
        let mut host = Host::new(config);
        host.register(model);
        Self {
            host,
            process,
            instance: None,
        }
    }

    pub fn host(&self) -> &Host {
        &self.host
    }

    pub fn host_mut(&mut self) -> &mut Host {
        &mut self.host
    }

    pub fn instance(&self) -> Option<Uuid> {
        self.instance
    }

    fn id(&self) -> Result<Uuid, DriverError> {
        self.instance
            .ok_or_else(|| DriverError::Cluster("no instance started".into()))
    }
}

impl Cluster for LocalCluster {
    fn start(&mut self, starters: &BTreeMap<String, u32>) -> Result<Uuid, DriverError> {
        let id = self.host.start(&self.process, starters, None)?;
        self.instance = Some(id);
        Ok(id)
    }

    fn now(&mut self) -> Result<u64, DriverError> {
        Ok(self.host.now())
    }

    fn tasks(&mut self) -> Result<Vec<Task>, DriverError> {
        let filter = TaskFilter {
            instance: Some(self.id()?),
            ..TaskFilter::default()
        };
        Ok(self.host.tasks(&filter))
    }

    fn complete(&mut self, task: &Task, choice: Choice) -> Result<(), DriverError> {
        self.host
            .complete(task.id, choice)
            .map_err(|e| DriverError::Rejected {
                agent: task.agent.to_string(),
                state: task.state.clone(),
                reason: e.to_string(),
            })?;
        Ok(())
    }

    fn fire_due_timers(&mut self) -> Result<usize, DriverError> {
        Ok(self.host.fire_due_timers())
    }

    fn flush_retries(&mut self) -> Result<usize, DriverError> {
        Ok(self.host.flush_retries().0)
    }

    fn advance_to(&mut self, to: u64) -> Result<(), DriverError> {
        Ok(self.host.advance_to(to)?)
    }

    fn next_stop(&mut self) -> Result<Option<u64>, DriverError> {
        Ok(self.host.next_stop())
    }

    fn inject(&mut self, i: &Injection) -> Result<(), DriverError> {
        let id = self.id()?;
        self.host.inject(
            id,
            i.from.clone(),
            i.to.clone(),
            &i.message_type,
            i.payload.clone(),
        )?;
        Ok(())
    }

    fn snapshot(&mut self) -> Result<Snapshot, DriverError> {
        let id = self.id()?;
        let engine = self
            .host
            .instance(id)
            .ok_or_else(|| DriverError::Cluster(format!("instance {id} vanished")))?;
        Ok(Snapshot {
            trace: engine.trace().to_vec(),
            statuses: engine.statuses(),
            residue: engine.residue(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub instance: Uuid,
    /// Logical records only, numbered from 1.
    pub trace: Vec<TraceRecord>,
    pub full_trace: Vec<TraceRecord>,
    pub statuses: BTreeMap<String, AgentStatus>,
    pub residue: BTreeMap<String, Vec<(String, String)>>,
    pub commands: usize,
    /// Tasks still open when the run stopped (withheld or unsatisfiable).
    pub open_tasks: Vec<Task>,
}

/// Drives an instance to quiescence under `script`.
///
/// Each step takes the first applicable action: fire due timers, perform
/// due retries, deliver due injections, complete the earliest decidable
/// task, and otherwise advance the clock to the next plan point, timer,
/// retry, hold or injection. The run ends when none remains.
pub fn run_scripted<C: Cluster>(
    cluster: &mut C,
    script: &DeciderScript,
) -> Result<RunOutcome, DriverError> {
    let instance = cluster.start(&script.starters)?;
    let mut plan: Vec<u64> = script.advance.clone();
    plan.sort_unstable();
    let mut injections: Vec<&Injection> = script.inject.iter().collect();
    injections.sort_by_key(|i| i.at_ms);
    let mut injections = std::collections::VecDeque::from(injections);
    let mut commands = 0usize;

    let open = loop {
        if commands >= COMMAND_CAP {
            return Err(DriverError::NonQuiescent(commands));
        }
        let fired = cluster.fire_due_timers()?;
        if fired > 0 {
            commands += fired;
            continue;
        }
        let flushed = cluster.flush_retries()?;
        if flushed > 0 {
            commands += flushed;
            continue;
        }
        let now = cluster.now()?;
        if injections.front().is_some_and(|i| i.at_ms <= now) {
            let i = injections.pop_front().expect("checked");
            cluster.inject(i)?;
            commands += 1;
            continue;
        }

        let tasks = cluster.tasks()?;
        let mut holds = Vec::new();
        let mut acted = false;
        for task in &tasks {
            match script.decide(task, now) {
                Verdict::Ready(choice) => {
                    cluster.complete(task, choice)?;
                    commands += 1;
                    acted = true;
                    break;
                }
                Verdict::Hold(at) => holds.push(at),
                Verdict::Blocked | Verdict::Withhold => {}
                Verdict::Unscripted => {
                    return Err(DriverError::Unscripted {
                        agent: task.agent.to_string(),
                        state: task.state.clone(),
                        occurrence: task.occurrence,
                    })
                }
            }
        }
        if acted {
            continue;
        }

        let next = plan
            .iter()
            .copied()
            .chain(cluster.next_stop()?)
            .chain(holds)
            .chain(injections.front().map(|i| i.at_ms))
            .filter(|t| *t > now)
            .min();
        match next {
            Some(t) => {
                cluster.advance_to(t)?;
                plan.retain(|p| *p > t);
                commands += 1;
            }
            None => break tasks,
        }
    };

    let snap = cluster.snapshot()?;
    Ok(RunOutcome {
        instance,
        trace: logical(&snap.trace),
        full_trace: snap.trace,
        statuses: snap.statuses,
        residue: snap.residue,
        commands,
        open_tasks: open,
    })
}
