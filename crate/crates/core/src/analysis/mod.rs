//! Bounded explicit-state exploration of a composed process.
//!
//! Payloads are abstracted away: a pool is a multiset of
//! `(message type, sender subject)`, every branch label is a possible
//! decision and an armed timer may fire at any moment its agent sits in the
//! timer's state. External subjects are the environment and can send any
//! declared message whenever a receive state accepts it; messages sent to
//! them vanish.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::{AgentRef, AgentStatus, Engine, Record};
use crate::model::{StateKind, TimerEffect, Trigger, ValidModel};
use crate::tasks::{
    run_scripted, DeciderScript, DriverError, Injection, LocalCluster, Occurrence, PickSelector,
    Rule, ScriptChoice,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreBounds {
    /// Instances considered per multi-subject.
    pub max_instances: u32,
    /// Entries an input pool may hold before the move that overfills it is cut.
    pub pool_bound: usize,
    pub max_states: usize,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        Self {
            max_instances: 4,
            pool_bound: 8,
            max_states: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreStats {
    pub states: usize,
    pub transitions: usize,
    pub terminal: usize,
    /// Some behavior was cut off by a bound.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentView {
    pub state: String,
    pub status: AgentStatus,
    /// State whose timer is armed, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timer: Option<String>,
    /// `(type, sender subject)`, sorted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pool: Vec<(String, String)>,
}

/// A readable global state, keyed by agent label (`Subject#i`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateView {
    pub agents: BTreeMap<String, AgentView>,
}

impl StateView {
    /// The abstraction of an engine's current state.
    pub fn of_engine(engine: &Engine) -> Self {
        let agents = engine
            .agents()
            .map(|a| {
                let mut pool: Vec<(String, String)> = a
                    .pool
                    .entries
                    .iter()
                    .map(|e| (e.message_type.clone(), e.from.subject.clone()))
                    .collect();
                pool.sort();
                let view = AgentView {
                    state: a.current_state.clone(),
                    status: a.status,
                    timer: a
                        .timer
                        .as_ref()
                        .filter(|_| a.status != AgentStatus::Completed)
                        .map(|t| t.state.clone()),
                    pool,
                };
                (a.agent_ref().to_string(), view)
            })
            .collect();
        Self { agents }
    }

    pub fn stuck_agents(&self) -> Vec<&str> {
        self.agents
            .iter()
            .filter(|(_, a)| a.status != AgentStatus::Completed)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn residue(&self) -> usize {
        self.agents.values().map(|a| a.pool.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Step {
    Branch {
        agent: AgentRef,
        state: String,
        label: String,
    },
    Send {
        agent: AgentRef,
        state: String,
        message: String,
        targets: Vec<AgentRef>,
    },
    Pick {
        agent: AgentRef,
        state: String,
        message: String,
        from: String,
    },
    /// The environment sends and the agent picks the message at once.
    External {
        agent: AgentRef,
        state: String,
        message: String,
        from: String,
    },
    Timeout {
        agent: AgentRef,
        state: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deadlock {
    pub state: StateView,
    /// A shortest path from the initial state.
    pub path: Vec<Step>,
    pub script: DeciderScript,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leak {
    pub state: StateView,
    pub residue: usize,
    pub path: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub process: String,
    pub bounds: ExploreBounds,
    pub stats: ExploreStats,
    pub deadlocks: Vec<Deadlock>,
    pub leaks: Vec<Leak>,
    /// Largest residue over all leaking terminal states.
    pub max_residue: usize,
}

// Compact encoding used during the search.

type Key = (u16, u32);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct AState {
    state: u16,
    timer: Option<u16>,
    pool: Vec<(u16, u16)>,
}

type GState = BTreeMap<Key, AState>;

#[derive(Debug, Clone)]
enum MoveKind {
    Branch(usize),
    Send { arm: usize, targets: Vec<u32> },
    Pick(usize),
    External(usize),
    Fire,
}

#[derive(Debug, Clone)]
struct Move {
    agent: Key,
    state: u16,
    kind: MoveKind,
}

struct SendArm {
    message: u16,
    to: u16,
    min: u32,
    max: u32,
    next: u16,
}

struct RecvArm {
    message: u16,
    from: u16,
    next: u16,
}

struct StateInfo {
    id: String,
    kind: StateKind,
    end: bool,
    branches: Vec<(String, u16)>,
    sends: Vec<SendArm>,
    receives: Vec<RecvArm>,
    timeout: Option<(u16, u64)>,
}

struct SubjectInfo {
    name: String,
    external: bool,
    instances: u32,
    states: Vec<StateInfo>,
    start: u16,
    /// Timer bookkeeping, `[pending + 1][entering]` (0 = no timer).
    timer_table: Vec<Vec<TimerEffect>>,
}

struct Ctx<'a> {
    model: &'a ValidModel,
    bounds: ExploreBounds,
    subjects: Vec<SubjectInfo>,
    types: Vec<String>,
}

impl<'a> Ctx<'a> {
    fn new(model: &'a ValidModel, bounds: ExploreBounds) -> (Self, bool) {
        let bounds = ExploreBounds {
            max_instances: bounds.max_instances.max(1),
            pool_bound: bounds.pool_bound.max(1),
            max_states: bounds.max_states.max(1),
        };
        let types: Vec<String> = model.message_types.iter().map(|m| m.name.clone()).collect();
        let ty = |n: &str| types.iter().position(|t| t == n).expect("declared type") as u16;
        let subj = |n: &str| {
            model
                .subjects
                .iter()
                .position(|s| s.name == n)
                .expect("declared subject") as u16
        };
        let mut capped = false;
        let mut subjects = Vec::new();
        for s in &model.subjects {
            let instances = if s.is_multi() {
                capped |= s.max_instances > bounds.max_instances;
                s.max_instances.min(bounds.max_instances)
            } else {
                1
            };
            let Some(b) = model.behavior(&s.name).filter(|_| !s.is_external()) else {
                subjects.push(SubjectInfo {
                    name: s.name.clone(),
                    external: s.is_external(),
                    instances,
                    states: Vec::new(),
                    start: 0,
                    timer_table: Vec::new(),
                });
                continue;
            };
            let idx = |id: &str| b.states.iter().position(|st| st.id == id).expect("state") as u16;
            let states = b
                .states
                .iter()
                .map(|st| {
                    let mut info = StateInfo {
                        id: st.id.clone(),
                        kind: st.kind,
                        end: st.is_end,
                        branches: Vec::new(),
                        sends: Vec::new(),
                        receives: Vec::new(),
                        timeout: None,
                    };
                    for t in b.outgoing(&st.id) {
                        let next = idx(&t.to);
                        match &t.trigger {
                            Trigger::Branch { label } => info.branches.push((label.clone(), next)),
                            Trigger::Send {
                                message,
                                to,
                                cardinality,
                            } => {
                                let def = model.subject(to).expect("declared");
                                let (min, max) = cardinality.bounds(def.max_instances);
                                info.sends.push(SendArm {
                                    message: ty(message),
                                    to: subj(to),
                                    min,
                                    max,
                                    next,
                                })
                            }
                            Trigger::Receive { message, from } => info.receives.push(RecvArm {
                                message: ty(message),
                                from: subj(from),
                                next,
                            }),
                            Trigger::Timeout { after_ms } => info.timeout = Some((next, *after_ms)),
                        }
                    }
                    info
                })
                .collect();
            let timer_table = std::iter::once(None)
                .chain(b.states.iter().map(|p| Some(p.id.as_str())))
                .map(|pending| {
                    b.states
                        .iter()
                        .map(|e| b.timer_on_entry(pending, e))
                        .collect()
                })
                .collect();
            let start = b
                .start_states()
                .next()
                .map(|st| idx(&st.id))
                .expect("start state");
            subjects.push(SubjectInfo {
                name: s.name.clone(),
                external: s.is_external(),
                instances,
                states,
                start,
                timer_table,
            });
        }
        (
            Self {
                model,
                bounds,
                subjects,
                types,
            },
            capped,
        )
    }

    fn agent_ref(&self, k: Key) -> AgentRef {
        AgentRef::new(self.subjects[k.0 as usize].name.as_str(), k.1)
    }

    fn state_id(&self, k: Key, state: u16) -> &str {
        &self.subjects[k.0 as usize].states[state as usize].id
    }

    fn enter(&self, subject: u16, a: &mut AState, to: u16) {
        let s = &self.subjects[subject as usize];
        let pending = a.timer.map_or(0, |t| t as usize + 1);
        match s.timer_table[pending][to as usize] {
            TimerEffect::Keep => {}
            TimerEffect::Cancel => a.timer = None,
            TimerEffect::Arm { .. } => a.timer = Some(to),
        }
        a.state = to;
        if s.states[to as usize].end {
            a.timer = None;
        }
    }

    fn spawn(&self, subject: u16) -> AState {
        let start = self.subjects[subject as usize].start;
        let mut a = AState {
            state: start,
            timer: None,
            pool: Vec::new(),
        };
        self.enter(subject, &mut a, start);
        a
    }

    fn initial(&self, starters: &BTreeMap<String, u32>) -> (GState, bool) {
        let mut g = GState::new();
        let mut capped = false;
        for (name, count) in starters {
            let Some(i) = self.subjects.iter().position(|s| &s.name == name) else {
                continue;
            };
            let s = &self.subjects[i];
            if s.external {
                continue;
            }
            capped |= *count > s.instances;
            for index in 0..(*count).min(s.instances) {
                g.insert((i as u16, index), self.spawn(i as u16));
            }
        }
        (g, capped)
    }

    fn accepted(&self, k: Key, a: &AState) -> bool {
        let st = &self.subjects[k.0 as usize].states[a.state as usize];
        st.receives
            .iter()
            .any(|r| a.pool.contains(&(r.message, r.from)))
    }

    fn status(&self, k: Key, a: &AState) -> AgentStatus {
        let st = &self.subjects[k.0 as usize].states[a.state as usize];
        if st.end {
            AgentStatus::Completed
        } else {
            match st.kind {
                StateKind::Function | StateKind::Send => AgentStatus::WaitingDecision,
                StateKind::Receive if self.accepted(k, a) => AgentStatus::WaitingDecision,
                StateKind::Receive => AgentStatus::WaitingMessage,
            }
        }
    }

    fn view(&self, g: &GState) -> StateView {
        let agents = g
            .iter()
            .map(|(k, a)| {
                let mut pool: Vec<(String, String)> = a
                    .pool
                    .iter()
                    .map(|(t, f)| {
                        (
                            self.types[*t as usize].clone(),
                            self.subjects[*f as usize].name.clone(),
                        )
                    })
                    .collect();
                pool.sort();
                let view = AgentView {
                    state: self.state_id(*k, a.state).to_string(),
                    status: self.status(*k, a),
                    timer: a.timer.map(|t| self.state_id(*k, t).to_string()),
                    pool,
                };
                (self.agent_ref(*k).to_string(), view)
            })
            .collect();
        StateView { agents }
    }

    /// Successors of `g`. The flag reports moves cut by the pool bound.
    fn successors(&self, g: &GState) -> (Vec<(Move, GState)>, bool) {
        let mut out = Vec::new();
        let mut cut = false;
        for (&k, a) in g {
            let s = &self.subjects[k.0 as usize];
            let st = &s.states[a.state as usize];
            if st.end {
                continue;
            }
            let mv = |kind| Move {
                agent: k,
                state: a.state,
                kind,
            };
            for (i, (_, next)) in st.branches.iter().enumerate() {
                let mut n = g.clone();
                self.enter(k.0, n.get_mut(&k).expect("present"), *next);
                out.push((mv(MoveKind::Branch(i)), n));
            }
            for (i, arm) in st.sends.iter().enumerate() {
                let target = &self.subjects[arm.to as usize];
                let pools: Vec<Vec<u32>> = if target.external {
                    vec![vec![0]]
                } else {
                    let k_max = target.instances;
                    let hi = arm.max.min(k_max);
                    cut |= arm.min > k_max || arm.max > k_max;
                    (arm.min.max(1)..=hi)
                        .flat_map(|size| combinations(k_max, size))
                        .collect()
                };
                for targets in pools {
                    let mut n = g.clone();
                    self.enter(k.0, n.get_mut(&k).expect("present"), arm.next);
                    let mut ok = true;
                    if !target.external {
                        for &t in &targets {
                            let tk = (arm.to, t);
                            let ta = n.entry(tk).or_insert_with(|| self.spawn(arm.to));
                            ta.pool.push((arm.message, k.0));
                            ta.pool.sort_unstable();
                            if ta.pool.len() > self.bounds.pool_bound {
                                ok = false;
                            }
                        }
                    }
                    if ok {
                        out.push((mv(MoveKind::Send { arm: i, targets }), n));
                    } else {
                        cut = true;
                    }
                }
            }
            for (i, arm) in st.receives.iter().enumerate() {
                if self.subjects[arm.from as usize].external {
                    let mut n = g.clone();
                    self.enter(k.0, n.get_mut(&k).expect("present"), arm.next);
                    out.push((mv(MoveKind::External(i)), n));
                    continue;
                }
                if let Some(pos) = a.pool.iter().position(|e| *e == (arm.message, arm.from)) {
                    let mut n = g.clone();
                    let na = n.get_mut(&k).expect("present");
                    na.pool.remove(pos);
                    self.enter(k.0, na, arm.next);
                    out.push((mv(MoveKind::Pick(i)), n));
                }
            }
            if let (Some(owner), Some((next, _))) = (a.timer, st.timeout) {
                if owner == a.state {
                    let mut n = g.clone();
                    let na = n.get_mut(&k).expect("present");
                    na.timer = None;
                    self.enter(k.0, na, next);
                    out.push((mv(MoveKind::Fire), n));
                }
            }
        }
        (out, cut)
    }

    fn step(&self, m: &Move) -> Step {
        let agent = self.agent_ref(m.agent);
        let s = &self.subjects[m.agent.0 as usize];
        let st = &s.states[m.state as usize];
        let state = st.id.clone();
        match &m.kind {
            MoveKind::Branch(i) => Step::Branch {
                agent,
                state,
                label: st.branches[*i].0.clone(),
            },
            MoveKind::Send { arm, targets } => {
                let a = &st.sends[*arm];
                let to = &self.subjects[a.to as usize].name;
                Step::Send {
                    agent,
                    state,
                    message: self.types[a.message as usize].clone(),
                    targets: targets
                        .iter()
                        .map(|i| AgentRef::new(to.as_str(), *i))
                        .collect(),
                }
            }
            MoveKind::Pick(i) | MoveKind::External(i) => {
                let a = &st.receives[*i];
                let message = self.types[a.message as usize].clone();
                let from = self.subjects[a.from as usize].name.clone();
                if matches!(m.kind, MoveKind::Pick(_)) {
                    Step::Pick {
                        agent,
                        state,
                        message,
                        from,
                    }
                } else {
                    Step::External {
                        agent,
                        state,
                        message,
                        from,
                    }
                }
            }
            MoveKind::Fire => Step::Timeout { agent, state },
        }
    }

    /// A script that drives the engine along `path`: one decision per
    /// millisecond, timers at their natural expiry, everything else withheld.
    fn script(
        &self,
        starters: &BTreeMap<String, u32>,
        init: &GState,
        path: &[Move],
    ) -> DeciderScript {
        let mut visits: BTreeMap<(Key, u16), u32> = BTreeMap::new();
        let mut armed: BTreeMap<Key, u64> = BTreeMap::new();
        let mut g = init.clone();
        for (k, a) in &g {
            *visits.entry((*k, a.state)).or_default() += 1;
            if a.timer.is_some() {
                armed.insert(*k, 0);
            }
        }
        let mut rules = Vec::new();
        let mut inject = Vec::new();
        let mut t = 0u64;
        for m in path {
            let s = &self.subjects[m.agent.0 as usize];
            let st = &s.states[m.state as usize];
            let occurrence = Occurrence::Nth(visits.get(&(m.agent, m.state)).copied().unwrap_or(1));
            let rule = |at_ms, choice| Rule {
                subject: s.name.clone(),
                state: st.id.clone(),
                index: Some(m.agent.1),
                occurrence,
                at_ms: Some(at_ms),
                when_consumed: BTreeMap::new(),
                choice,
                payload: Record::new(),
            };
            match self.step(m) {
                Step::Branch { label, .. } => {
                    t += 1;
                    rules.push(rule(t, ScriptChoice::Branch(label)));
                }
                Step::Send { targets, .. } => {
                    t += 1;
                    rules.push(rule(t, ScriptChoice::Targets(targets)));
                }
                Step::Pick { message, from, .. } => {
                    t += 1;
                    rules.push(rule(
                        t,
                        ScriptChoice::Pick(PickSelector::Match {
                            message_type: Some(message),
                            from: Some(from),
                        }),
                    ));
                }
                Step::External { message, from, .. } => {
                    t += 1;
                    inject.push(Injection {
                        at_ms: t,
                        from: AgentRef::new(from.as_str(), 0),
                        to: self.agent_ref(m.agent),
                        message_type: message.clone(),
                        payload: Record::new(),
                    });
                    rules.push(rule(
                        t,
                        ScriptChoice::Pick(PickSelector::Match {
                            message_type: Some(message),
                            from: Some(from),
                        }),
                    ));
                }
                Step::Timeout { .. } => {
                    let after = st.timeout.map_or(0, |(_, d)| d);
                    let due = armed.get(&m.agent).copied().unwrap_or(0) + after;
                    t = due.max(t + 1);
                }
            }
            // advance the abstract state to keep visit counts and arm times
            let next = self
                .successors(&g)
                .0
                .into_iter()
                .find(|(c, _)| same_move(c, m))
                .map(|(_, n)| n)
                .expect("path moves are enabled");
            for (k, a) in &next {
                let before = g.get(k);
                if k != &m.agent && before.is_some() {
                    continue;
                }
                *visits.entry((*k, a.state)).or_default() += 1;
                let fresh = match before {
                    None => a.timer.is_some(),
                    Some(b) => {
                        a.timer.is_some()
                            && (a.timer != b.timer || matches!(m.kind, MoveKind::Fire))
                    }
                };
                if fresh {
                    armed.insert(*k, t);
                }
            }
            g = next;
        }
        let mut withhold: Vec<Rule> = self
            .subjects
            .iter()
            .flat_map(|s| {
                s.states.iter().filter(|st| !st.end).map(|st| Rule {
                    subject: s.name.clone(),
                    state: st.id.clone(),
                    index: None,
                    occurrence: Occurrence::Any,
                    at_ms: None,
                    when_consumed: BTreeMap::new(),
                    choice: ScriptChoice::Withhold,
                    payload: Record::new(),
                })
            })
            .collect();
        rules.append(&mut withhold);
        DeciderScript {
            starters: starters.clone(),
            rules,
            default: None,
            advance: Vec::new(),
            inject,
            expect: Default::default(),
        }
    }
}

fn same_move(a: &Move, b: &Move) -> bool {
    a.agent == b.agent
        && a.state == b.state
        && match (&a.kind, &b.kind) {
            (MoveKind::Branch(x), MoveKind::Branch(y)) => x == y,
            (MoveKind::Pick(x), MoveKind::Pick(y)) => x == y,
            (MoveKind::External(x), MoveKind::External(y)) => x == y,
            (
                MoveKind::Send {
                    arm: x,
                    targets: tx,
                },
                MoveKind::Send {
                    arm: y,
                    targets: ty,
                },
            ) => x == y && tx == ty,
            (MoveKind::Fire, MoveKind::Fire) => true,
            _ => false,
        }
}

/// Index sets of the given size drawn from `0..n`, in lexicographic order.
fn combinations(n: u32, size: u32) -> Vec<Vec<u32>> {
    fn go(start: u32, n: u32, size: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() as u32 == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size <= n {
        go(0, n, size, &mut Vec::new(), &mut out);
    }
    out
}

struct Graph {
    states: Vec<GState>,
    parent: Vec<Option<(usize, Move)>>,
    terminal: Vec<usize>,
    stats: ExploreStats,
    init: GState,
}

fn search(ctx: &Ctx, starters: &BTreeMap<String, u32>, capped: bool) -> Graph {
    let (init, starters_capped) = ctx.initial(starters);
    let mut stats = ExploreStats {
        states: 0,
        transitions: 0,
        terminal: 0,
        truncated: capped || starters_capped,
    };
    let mut index: HashMap<GState, usize> = HashMap::new();
    let mut states = vec![init.clone()];
    let mut parent = vec![None];
    let mut terminal = Vec::new();
    index.insert(init.clone(), 0);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        let (succ, cut) = ctx.successors(&states[i]);
        stats.truncated |= cut;
        if succ.is_empty() && !cut {
            terminal.push(i);
        }
        for (m, n) in succ {
            stats.transitions += 1;
            if index.contains_key(&n) {
                continue;
            }
            if states.len() >= ctx.bounds.max_states {
                stats.truncated = true;
                continue;
            }
            let j = states.len();
            index.insert(n.clone(), j);
            states.push(n);
            parent.push(Some((i, m)));
            queue.push_back(j);
        }
    }
    stats.states = states.len();
    stats.terminal = terminal.len();
    Graph {
        states,
        parent,
        terminal,
        stats,
        init,
    }
}

fn path_to(g: &Graph, mut i: usize) -> Vec<Move> {
    let mut path = Vec::new();
    while let Some((p, m)) = &g.parent[i] {
        path.push(m.clone());
        i = *p;
    }
    path.reverse();
    path
}

/// One instance of every internal single subject whose behavior does not
/// begin by waiting for a message. Used when no starters are given.
pub fn default_starters(model: &ValidModel) -> BTreeMap<String, u32> {
    model
        .subjects
        .iter()
        .filter(|s| !s.is_external() && !s.is_multi())
        .filter(|s| {
            model
                .behavior(&s.name)
                .is_some_and(|b| b.start_states().any(|st| st.kind != StateKind::Receive))
        })
        .map(|s| (s.name.clone(), 1))
        .collect()
}

/// Explores every reachable global state within `bounds`.
pub fn explore(
    model: &ValidModel,
    starters: &BTreeMap<String, u32>,
    bounds: ExploreBounds,
) -> ExploreStats {
    let (ctx, capped) = Ctx::new(model, bounds);
    search(&ctx, starters, capped).stats
}

/// Explores and returns every reachable state in readable form, sorted.
pub fn reachable_states(
    model: &ValidModel,
    starters: &BTreeMap<String, u32>,
    bounds: ExploreBounds,
) -> Vec<StateView> {
    let (ctx, capped) = Ctx::new(model, bounds);
    let g = search(&ctx, starters, capped);
    let mut out: Vec<StateView> = g.states.iter().map(|s| ctx.view(s)).collect();
    out.sort();
    out
}

/// Deadlocks and leaks from one exploration. Both lists are sorted by the
/// state's readable encoding.
pub fn analyze(
    model: &ValidModel,
    starters: &BTreeMap<String, u32>,
    bounds: ExploreBounds,
) -> Analysis {
    let (ctx, capped) = Ctx::new(model, bounds);
    let g = search(&ctx, starters, capped);
    let mut deadlocks = Vec::new();
    let mut leaks = Vec::new();
    for &i in &g.terminal {
        let view = ctx.view(&g.states[i]);
        let stuck = !view.stuck_agents().is_empty();
        let residue = view.residue();
        if !stuck && residue == 0 {
            continue;
        }
        let path = path_to(&g, i);
        let steps: Vec<Step> = path.iter().map(|m| ctx.step(m)).collect();
        if residue > 0 {
            leaks.push(Leak {
                state: view.clone(),
                residue,
                path: steps.clone(),
            });
        }
        if stuck {
            deadlocks.push(Deadlock {
                state: view,
                path: steps,
                script: ctx.script(starters, &g.init, &path),
            });
        }
    }
    deadlocks.sort_by(|a, b| a.state.cmp(&b.state));
    leaks.sort_by(|a, b| a.state.cmp(&b.state));
    let max_residue = leaks.iter().map(|l| l.residue).max().unwrap_or(0);
    Analysis {
        process: ctx.model.name.clone(),
        bounds: ctx.bounds,
        stats: g.stats,
        deadlocks,
        leaks,
        max_residue,
    }
}

pub fn find_deadlocks(
    model: &ValidModel,
    starters: &BTreeMap<String, u32>,
    bounds: ExploreBounds,
) -> Vec<Deadlock> {
    analyze(model, starters, bounds).deadlocks
}

pub fn find_message_leaks(
    model: &ValidModel,
    starters: &BTreeMap<String, u32>,
    bounds: ExploreBounds,
) -> Vec<Leak> {
    analyze(model, starters, bounds).leaks
}

/// Runs a deadlock's replay script through the engine and returns the state
/// the run ends in, for comparison with [`Deadlock::state`].
pub fn replay(model: &ValidModel, deadlock: &Deadlock) -> Result<StateView, DriverError> {
    let mut cluster = LocalCluster::new(model.clone());
    let outcome = run_scripted(&mut cluster, &deadlock.script)?;
    let engine = cluster
        .host()
        .instance(outcome.instance)
        .ok_or_else(|| DriverError::Cluster("instance vanished".into()))?;
    Ok(StateView::of_engine(engine))
}

#[cfg(test)]
mod tests;
