//! Exhaustive exploration of scheduler interleavings.
//!
//! Starting from every placement of the tasks on the cores, the checker
//! explores all reachable scheduler states breadth-first. A running task
//! with action budget left may set its flag, clear it, access memory or
//! yield; independently of budgets the scheduler may dispatch, preempt,
//! retire or migrate tasks. After every transition the invariants are
//! checked, together with the toggle accounting rule (the counter grows by
//! the number of domains whose enablement changed) and flag isolation (no
//! transition changes the flag of a task other than the actor).

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use serde::Serialize;

use crate::sched::{EnablementPolicy, SchedKey, Scheduler, TaskId, TaskState};
use crate::topology::{CoreId, DomainGranularity, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelCheckParams {
    pub tasks: usize,
    pub actions_per_task: u8,
    pub siblings: usize,
    /// Stop after this many distinct states.
    pub state_limit: usize,
}

impl Default for ModelCheckParams {
    fn default() -> Self {
        Self {
            tasks: 3,
            actions_per_task: 4,
            siblings: 2,
            state_limit: 2_000_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ModelCheckReport {
    pub states: usize,
    pub transitions: usize,
    pub violations: usize,
    /// Descriptions of the first few violations.
    pub examples: Vec<String>,
    pub truncated: bool,
}

impl ModelCheckReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && !self.truncated
    }
}

#[derive(Clone, Copy, Debug)]
enum Move {
    Set(TaskId),
    Clear(TaskId),
    Access(TaskId),
    Yield(CoreId),
    Dispatch(CoreId),
    Preempt(CoreId),
    Exit(CoreId),
    Migrate(TaskId, CoreId),
}

#[derive(Clone)]
struct Node {
    sched: Scheduler,
    budgets: Vec<u8>,
}

impl Node {
    fn key(&self) -> (SchedKey, Vec<u8>) {
        (self.sched.state_key(), self.budgets.clone())
    }
}

pub fn check_interleavings(
    params: ModelCheckParams,
    policy: Arc<dyn EnablementPolicy>,
) -> ModelCheckReport {
    let topology = Topology::build(1, params.siblings, DomainGranularity::PerPhysicalCore)
        .expect("nonzero sibling count");
    let mut report = ModelCheckReport::default();
    let mut seen: HashSet<(SchedKey, Vec<u8>)> = HashSet::new();
    let mut queue = VecDeque::new();

    let placements = params.siblings.pow(params.tasks as u32);
    for placement in 0..placements {
        let mut sched =
            Scheduler::with_policy(topology.clone(), 1, policy.clone()).expect("nonzero quantum");
        sched.set_recording(false);
        let mut p = placement;
        for _ in 0..params.tasks {
            sched
                .create_task(CoreId(p % params.siblings))
                .expect("valid core");
            p /= params.siblings;
        }
        let node = Node {
            sched,
            budgets: vec![params.actions_per_task; params.tasks],
        };
        if seen.insert(node.key()) {
            queue.push_back(node);
        }
    }

    while let Some(node) = queue.pop_front() {
        for mv in moves(&node, &topology) {
            let mut next = node.clone();
            report.transitions += 1;
            if let Err(msg) = apply(&mut next, mv, &topology) {
                report.violations += 1;
                if report.examples.len() < 5 {
                    report.examples.push(format!("{mv:?}: {msg}"));
                }
                continue;
            }
            if seen.len() >= params.state_limit {
                report.truncated = true;
                continue;
            }
            if seen.insert(next.key()) {
                queue.push_back(next);
            }
        }
    }
    report.states = seen.len();
    report
}

fn moves(node: &Node, topology: &Topology) -> Vec<Move> {
    let s = &node.sched;
    let mut out = Vec::new();
    for core in topology.cores() {
        let queued = !s.run_queue(core).is_empty();
        match s.current(core) {
            None => {
                if queued {
                    out.push(Move::Dispatch(core));
                }
            }
            Some(t) => {
                if node.budgets[t.0] > 0 {
                    out.extend([
                        Move::Set(t),
                        Move::Clear(t),
                        Move::Access(t),
                        Move::Yield(core),
                    ]);
                }
                if queued {
                    out.push(Move::Preempt(core));
                }
                out.push(Move::Exit(core));
            }
        }
        for task in s.tasks() {
            if task.state != TaskState::Finished && task.assigned_core == Some(core) {
                for to in topology.cores().filter(|&c| c != core) {
                    out.push(Move::Migrate(task.tid, to));
                }
            }
        }
    }
    out
}

fn apply(node: &mut Node, mv: Move, topology: &Topology) -> Result<(), String> {
    let s = &mut node.sched;
    let flags_before: Vec<bool> = s.tasks().iter().map(|t| t.prefetch_disable).collect();
    let law_before: Vec<bool> = topology.domains().map(|d| s.enablement_law(d)).collect();
    let toggles_before = s.toggle_counter();
    let mut actor = None;

    let result = match mv {
        Move::Set(t) | Move::Clear(t) => {
            actor = Some(t);
            node.budgets[t.0] -= 1;
            s.prctl_set(t, matches!(mv, Move::Set(_)))
        }
        Move::Access(t) => {
            node.budgets[t.0] -= 1;
            let core = s.task(t).ok().and_then(|x| x.assigned_core);
            let domain = core.and_then(|c| topology.sharing_domain_of(c).ok());
            match domain {
                Some(d) if s.task(t).is_ok_and(|x| x.prefetch_disable) && s.domain_enabled(d) => {
                    return Err(format!(
                        "flagged task {t} accessed memory with the prefetcher on"
                    ));
                }
                _ => Ok(()),
            }
        }
        Move::Yield(core) => {
            let t = s.current(core).expect("yield from running task");
            node.budgets[t.0] -= 1;
            s.rotate(core);
            Ok(())
        }
        Move::Dispatch(core) | Move::Preempt(core) => {
            s.rotate(core);
            Ok(())
        }
        Move::Exit(core) => {
            s.exit_current(core);
            Ok(())
        }
        Move::Migrate(t, to) => s.migrate(t, to),
    };
    result.map_err(|e| e.to_string())?;
    s.check_invariants().map_err(|e| e.to_string())?;

    let law_after: Vec<bool> = topology.domains().map(|d| s.enablement_law(d)).collect();
    let changed = law_before
        .iter()
        .zip(&law_after)
        .filter(|(a, b)| a != b)
        .count() as u64;
    if s.toggle_counter() - toggles_before != changed {
        return Err(format!(
            "toggle counter moved by {} while {changed} domains changed",
            s.toggle_counter() - toggles_before
        ));
    }
    for (i, t) in s.tasks().iter().enumerate() {
        if Some(TaskId(i)) != actor && t.prefetch_disable != flags_before[i] {
            return Err(format!("flag of task {i} changed by another task"));
        }
    }
    Ok(())
}
