//! Per-core round-robin scheduler with the prefetch-disable hooks.
//!
//! Every task carries a `prefetch_disable` flag. The scheduler keeps one
//! mask bit per logical core saying whether the task currently running there
//! has the flag set, and after every event recomputes the enable bit of each
//! affected sharing domain: a domain's prefetcher is enabled only if no core
//! in it runs a flagged task. Idle cores count as unflagged.

mod task;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{CoreId, DomainId, Topology, TopologyError};

pub use task::{Task, TaskId, TaskState};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedError {
    #[error("task {0} does not exist")]
    UnknownTask(TaskId),
    #[error("task {0} is not running")]
    NotRunning(TaskId),
    #[error("task {0} is not runnable")]
    NotRunnable(TaskId),
    #[error("task {0} has finished")]
    Finished(TaskId),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("scheduler quantum must be at least 1 tick")]
    ZeroQuantum,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InvariantViolation {
    #[error("mask bit of core {core} is {stored} but the running task says {expected}")]
    Mask {
        core: CoreId,
        stored: bool,
        expected: bool,
    },
    #[error("domain {domain} prefetcher enabled={actual}, enablement law requires {required}")]
    Enablement {
        domain: DomainId,
        actual: bool,
        required: bool,
    },
    #[error("task {0} is recorded as running on more than one core or in an inconsistent state")]
    Placement(TaskId),
}

/// One bit per logical core: does the task scheduled there want the
/// prefetcher off?
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DomainMask {
    bits: Vec<bool>,
}

impl DomainMask {
    pub fn new(cores: usize) -> Self {
        Self {
            bits: vec![false; cores],
        }
    }

    pub fn get(&self, core: CoreId) -> bool {
        self.bits[core.0]
    }

    pub fn set(&mut self, core: CoreId, on: bool) {
        self.bits[core.0] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// The enablement law: a domain's prefetcher may run only if none of its
/// cores currently runs a task with the prefetch-disable flag set.
pub fn enablement_law(topology: &Topology, mask: &DomainMask, domain: DomainId) -> bool {
    topology.cores_in(domain).iter().all(|&c| !mask.get(c))
}

/// Decides a domain's enable bit after an event on `acting_core`.
pub trait EnablementPolicy: fmt::Debug + Send + Sync {
    fn decide(
        &self,
        topology: &Topology,
        mask: &DomainMask,
        domain: DomainId,
        acting_core: CoreId,
    ) -> bool;
}

/// The shared-domain enablement law.
#[derive(Clone, Copy, Debug, Default)]
pub struct DomainLaw;

impl EnablementPolicy for DomainLaw {
    fn decide(&self, topology: &Topology, mask: &DomainMask, domain: DomainId, _: CoreId) -> bool {
        enablement_law(topology, mask, domain)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Run,
    Switch,
    PrctlSet,
    PrctlClear,
    Migrate,
    Spawn,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Run => "run",
            EventKind::Switch => "switch",
            EventKind::PrctlSet => "prctl_set",
            EventKind::PrctlClear => "prctl_clear",
            EventKind::Migrate => "migrate",
            EventKind::Spawn => "spawn",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedEvent {
    pub tick: u64,
    pub core: CoreId,
    pub kind: EventKind,
    pub tid: Option<TaskId>,
    pub domain: DomainId,
    pub prefetcher_enabled: bool,
}

/// A change of a domain's prefetcher enable bit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggle {
    pub tick: u64,
    pub domain: DomainId,
    pub enabled: bool,
}

/// Everything the model checker needs to recognise a revisited state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SchedKey {
    tasks: Vec<(bool, TaskState, Option<CoreId>)>,
    run_queues: Vec<VecDeque<TaskId>>,
    current: Vec<Option<TaskId>>,
    mask: DomainMask,
    domain_enabled: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Scheduler {
    topology: Topology,
    tasks: Vec<Task>,
    run_queues: Vec<VecDeque<TaskId>>,
    current: Vec<Option<TaskId>>,
    mask: DomainMask,
    domain_enabled: Vec<bool>,
    quantum: u32,
    slice_used: Vec<u32>,
    toggle_counter: u64,
    switch_counter: u64,
    policy: Arc<dyn EnablementPolicy>,
    tick: u64,
    recording: bool,
    events: Vec<SchedEvent>,
    toggles: Vec<Toggle>,
}

impl Scheduler {
    pub fn new(topology: Topology, quantum: u32) -> Result<Self, SchedError> {
        Self::with_policy(topology, quantum, Arc::new(DomainLaw))
    }

    pub fn with_policy(
        topology: Topology,
        quantum: u32,
        policy: Arc<dyn EnablementPolicy>,
    ) -> Result<Self, SchedError> {
        if quantum == 0 {
            return Err(SchedError::ZeroQuantum);
        }
        let cores = topology.logical_core_count();
        let domains = topology.domain_count();
        Ok(Self {
            topology,
            tasks: Vec::new(),
            run_queues: vec![VecDeque::new(); cores],
            current: vec![None; cores],
            mask: DomainMask::new(cores),
            domain_enabled: vec![true; domains],
            quantum,
            slice_used: vec![0; cores],
            toggle_counter: 0,
            switch_counter: 0,
            policy,
            tick: 0,
            recording: true,
            events: Vec::new(),
            toggles: Vec::new(),
        })
    }

    /// Turns event and toggle logging on or off (counters are always kept).
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn quantum(&self) -> u32 {
        self.quantum
    }

    pub fn task(&self, tid: TaskId) -> Result<&Task, SchedError> {
        self.tasks.get(tid.0).ok_or(SchedError::UnknownTask(tid))
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn current(&self, core: CoreId) -> Option<TaskId> {
        self.current[core.0]
    }

    pub fn run_queue(&self, core: CoreId) -> &VecDeque<TaskId> {
        &self.run_queues[core.0]
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }

    pub fn domain_enabled(&self, domain: DomainId) -> bool {
        self.domain_enabled[domain.0]
    }

    pub fn toggle_counter(&self) -> u64 {
        self.toggle_counter
    }

    pub fn switch_counter(&self) -> u64 {
        self.switch_counter
    }

    pub fn events(&self) -> &[SchedEvent] {
        &self.events
    }

    pub fn toggles(&self) -> &[Toggle] {
        &self.toggles
    }

    pub fn all_finished(&self) -> bool {
        self.tasks.iter().all(|t| t.state == TaskState::Finished)
    }

    pub fn enablement_law(&self, domain: DomainId) -> bool {
        enablement_law(&self.topology, &self.mask, domain)
    }

    /// Creates a task without a parent: flag clear, queued on `core`.
    pub fn create_task(&mut self, core: CoreId) -> Result<TaskId, SchedError> {
        self.create_task_with(core, false, false)
    }

    /// Creates a parentless task with an explicit initial flag, e.g. a
    /// process started by a wrapper that already requested protection.
    pub fn create_task_with(
        &mut self,
        core: CoreId,
        prefetch_disable: bool,
        privileged: bool,
    ) -> Result<TaskId, SchedError> {
        self.topology.check_core(core)?;
        let tid = TaskId(self.tasks.len());
        self.tasks.push(Task {
            tid,
            prefetch_disable,
            state: TaskState::Runnable,
            assigned_core: Some(core),
            parent: None,
            privileged,
        });
        self.run_queues[core.0].push_back(tid);
        Ok(tid)
    }

    /// Forks `parent`. The child inherits the flag and joins the parent's queue.
    pub fn spawn(&mut self, parent: TaskId) -> Result<TaskId, SchedError> {
        let p = self.running(parent)?;
        let core = p.assigned_core.expect("running task has a core");
        let (flag, privileged) = (p.prefetch_disable, p.privileged);
        let tid = TaskId(self.tasks.len());
        self.tasks.push(Task {
            tid,
            prefetch_disable: flag,
            state: TaskState::Runnable,
            assigned_core: Some(core),
            parent: Some(parent),
            privileged,
        });
        self.run_queues[core.0].push_back(tid);
        self.record(core, EventKind::Spawn, Some(tid));
        Ok(tid)
    }

    pub fn prctl_query(&self, tid: TaskId) -> Result<bool, SchedError> {
        Ok(self.task(tid)?.prefetch_disable)
    }

    /// Sets or clears the calling task's flag. The domain's prefetcher state
    /// is updated before the call returns.
    pub fn prctl_set(&mut self, tid: TaskId, on: bool) -> Result<(), SchedError> {
        let core = self
            .running(tid)?
            .assigned_core
            .expect("running task has a core");
        self.tasks[tid.0].prefetch_disable = on;
        self.mask.set(core, on);
        self.recompute(&[core], core);
        let kind = if on {
            EventKind::PrctlSet
        } else {
            EventKind::PrctlClear
        };
        self.record(core, kind, Some(tid));
        Ok(())
    }

    /// Replaces the task running on `core` by `next`. The previous task goes
    /// to the back of the core's run queue.
    pub fn context_switch(&mut self, core: CoreId, next: TaskId) -> Result<(), SchedError> {
        self.topology.check_core(core)?;
        let t = self.task(next)?;
        if t.state != TaskState::Runnable {
            return Err(SchedError::NotRunnable(next));
        }
        if let Some(prev) = self.current[core.0] {
            self.tasks[prev.0].state = TaskState::Runnable;
            self.run_queues[core.0].push_back(prev);
        }
        self.install(core, Some(next));
        self.recompute(&[core], core);
        self.record(core, EventKind::Switch, Some(next));
        Ok(())
    }

    /// The task on `core` ends; the next queued task (if any) takes over.
    pub fn exit_current(&mut self, core: CoreId) -> Option<TaskId> {
        let prev = self.current[core.0]?;
        self.tasks[prev.0].state = TaskState::Finished;
        self.tasks[prev.0].assigned_core = None;
        let next = self.run_queues[core.0].front().copied();
        self.install(core, next);
        self.recompute(&[core], core);
        self.record(core, EventKind::Switch, next);
        next
    }

    /// Round-robin rotation on `core` if another task is waiting.
    pub fn rotate(&mut self, core: CoreId) -> Option<TaskId> {
        let next = self.run_queues[core.0].front().copied()?;
        if self.current[core.0].is_none() {
            self.install(core, Some(next));
            self.recompute(&[core], core);
            self.record(core, EventKind::Switch, Some(next));
        } else {
            self.context_switch(core, next)
                .expect("queued task is runnable");
        }
        Some(next)
    }

    /// Moves `tid` to `to_core`. A running task keeps running there (it is
    /// the next task on the target); a queued task moves to the front of the
    /// target queue. The source core picks its next queued task.
    pub fn migrate(&mut self, tid: TaskId, to_core: CoreId) -> Result<(), SchedError> {
        self.topology.check_core(to_core)?;
        let t = self.task(tid)?;
        let from = match (t.state, t.assigned_core) {
            (TaskState::Finished, _) | (_, None) => return Err(SchedError::Finished(tid)),
            (_, Some(c)) => c,
        };
        if from == to_core {
            return Ok(());
        }
        match t.state {
            TaskState::Running => {
                let next = self.run_queues[from.0].front().copied();
                self.install(from, next);
                if let Some(prev) = self.current[to_core.0] {
                    self.tasks[prev.0].state = TaskState::Runnable;
                    self.run_queues[to_core.0].push_back(prev);
                }
                self.install(to_core, Some(tid));
                self.recompute(&[from, to_core], to_core);
            }
            TaskState::Runnable => {
                self.run_queues[from.0].retain(|&q| q != tid);
                self.run_queues[to_core.0].push_front(tid);
                self.tasks[tid.0].assigned_core = Some(to_core);
            }
            TaskState::Finished => unreachable!(),
        }
        self.record(to_core, EventKind::Migrate, Some(tid));
        Ok(())
    }

    /// Charges one tick to the task on `core`; true once its quantum is used up.
    pub fn charge_tick(&mut self, core: CoreId) -> bool {
        self.slice_used[core.0] += 1;
        self.slice_used[core.0] >= self.quantum
    }

    /// Restarts the time slice of the task on `core` (used when it keeps
    /// the core because nobody else is waiting).
    pub fn renew_slice(&mut self, core: CoreId) {
        self.slice_used[core.0] = 0;
    }

    /// Mask recomputed from the tasks currently running.
    pub fn recomputed_mask(&self) -> DomainMask {
        let mut m = DomainMask::new(self.topology.logical_core_count());
        for core in self.topology.cores() {
            if let Some(t) = self.current[core.0] {
                m.set(core, self.tasks[t.0].prefetch_disable);
            }
        }
        m
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let fresh = self.recomputed_mask();
        for core in self.topology.cores() {
            if fresh.get(core) != self.mask.get(core) {
                return Err(InvariantViolation::Mask {
                    core,
                    stored: self.mask.get(core),
                    expected: fresh.get(core),
                });
            }
        }
        for d in self.topology.domains() {
            let required = enablement_law(&self.topology, &fresh, d);
            if self.domain_enabled[d.0] != required {
                return Err(InvariantViolation::Enablement {
                    domain: d,
                    actual: self.domain_enabled[d.0],
                    required,
                });
            }
        }
        let mut seen = vec![false; self.tasks.len()];
        for (c, cur) in self.current.iter().enumerate() {
            if let Some(t) = cur {
                let task = &self.tasks[t.0];
                if seen[t.0] || !task.is_running() || task.assigned_core != Some(CoreId(c)) {
                    return Err(InvariantViolation::Placement(*t));
                }
                seen[t.0] = true;
            }
        }
        for task in &self.tasks {
            if task.is_running() && !seen[task.tid.0] {
                return Err(InvariantViolation::Placement(task.tid));
            }
        }
        Ok(())
    }

    pub fn state_key(&self) -> SchedKey {
        SchedKey {
            tasks: self
                .tasks
                .iter()
                .map(|t| (t.prefetch_disable, t.state, t.assigned_core))
                .collect(),
            run_queues: self.run_queues.clone(),
            current: self.current.clone(),
            mask: self.mask.clone(),
            domain_enabled: self.domain_enabled.clone(),
        }
    }

    fn running(&self, tid: TaskId) -> Result<&Task, SchedError> {
        let t = self.task(tid)?;
        match t.state {
            TaskState::Running => Ok(t),
            TaskState::Finished => Err(SchedError::Finished(tid)),
            TaskState::Runnable => Err(SchedError::NotRunning(tid)),
        }
    }

    // Puts `next` (or nothing) on `core` and updates its mask bit. The
    // previous occupant must already have been dealt with. Only a task
    // replacing another task counts as a context switch.
    fn install(&mut self, core: CoreId, next: Option<TaskId>) {
        let prev = self.current[core.0];
        if prev.is_some() && next.is_some() && prev != next {
            self.switch_counter += 1;
        }
        if let Some(n) = next {
            for q in &mut self.run_queues {
                q.retain(|&t| t != n);
            }
            let t = &mut self.tasks[n.0];
            t.state = TaskState::Running;
            t.assigned_core = Some(core);
        }
        self.current[core.0] = next;
        self.slice_used[core.0] = 0;
        let flag = next.is_some_and(|n| self.tasks[n.0].prefetch_disable);
        self.mask.set(core, flag);
    }

    fn recompute(&mut self, cores: &[CoreId], acting: CoreId) {
        let mut domains: Vec<DomainId> = cores
            .iter()
            .map(|&c| self.topology.sharing_domain_of(c).expect("valid core"))
            .collect();
        domains.sort_unstable();
        domains.dedup();
        for d in domains {
            let actor = if self.topology.cores_in(d).contains(&acting) {
                acting
            } else {
                *cores
                    .iter()
                    .find(|c| self.topology.cores_in(d).contains(c))
                    .expect("domain derived from cores")
            };
            let enabled = self.policy.decide(&self.topology, &self.mask, d, actor);
            if enabled != self.domain_enabled[d.0] {
                self.domain_enabled[d.0] = enabled;
                self.toggle_counter += 1;
                if self.recording {
                    self.toggles.push(Toggle {
                        tick: self.tick,
                        domain: d,
                        enabled,
                    });
                }
            }
        }
    }

    fn record(&mut self, core: CoreId, kind: EventKind, tid: Option<TaskId>) {
        if !self.recording {
            return;
        }
        let domain = self.topology.sharing_domain_of(core).expect("valid core");
        self.events.push(SchedEvent {
            tick: self.tick,
            core,
            kind,
            tid,
            domain,
            prefetcher_enabled: self.domain_enabled[domain.0],
        });
    }

    pub(crate) fn record_run(&mut self, core: CoreId, tid: TaskId) {
        self.record(core, EventKind::Run, Some(tid));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::DomainGranularity;

    fn smt_pair() -> Scheduler {
        Scheduler::new(
            Topology::build(1, 2, DomainGranularity::PerPhysicalCore).unwrap(),
            4,
        )
        .unwrap()
    }

    fn start(s: &mut Scheduler, core: CoreId) -> TaskId {
        let t = s.create_task(core).unwrap();
        s.rotate(core);
        t
    }

    #[test]
    fn prctl_disables_immediately() {
        let mut s = Scheduler::new(Topology::single_core(), 4).unwrap();
        let p1 = start(&mut s, CoreId(0));
        assert!(s.domain_enabled(DomainId(0)));
        s.prctl_set(p1, true).unwrap();
        assert!(!s.domain_enabled(DomainId(0)));
        assert_eq!(s.toggle_counter(), 1);
        s.prctl_set(p1, true).unwrap();
        assert_eq!(s.toggle_counter(), 1);
        s.check_invariants().unwrap();
    }

    #[test]
    fn sibling_flag_keeps_domain_disabled() {
        let mut s = smt_pair();
        let a = start(&mut s, CoreId(0));
        let b = start(&mut s, CoreId(1));
        s.prctl_set(b, true).unwrap();
        s.prctl_set(a, true).unwrap();
        s.prctl_set(a, false).unwrap();
        assert!(!s.domain_enabled(DomainId(0)));
        s.check_invariants().unwrap();
    }

    #[test]
    fn prctl_requires_running_task() {
        let mut s = Scheduler::new(Topology::single_core(), 4).unwrap();
        let t = s.create_task(CoreId(0)).unwrap();
        assert_eq!(s.prctl_set(t, true), Err(SchedError::NotRunning(t)));
        assert_eq!(
            s.prctl_set(TaskId(9), true),
            Err(SchedError::UnknownTask(TaskId(9)))
        );
    }

    #[test]
    fn query_and_inheritance() {
        let mut s = Scheduler::new(Topology::single_core(), 4).unwrap();
        let p = start(&mut s, CoreId(0));
        assert!(!s.prctl_query(p).unwrap());
        let plain_child = s.spawn(p).unwrap();
        assert!(!s.prctl_query(plain_child).unwrap());
        s.prctl_set(p, true).unwrap();
        assert!(s.prctl_query(p).unwrap());
        let child = s.spawn(p).unwrap();
        assert!(s.prctl_query(child).unwrap());
        // Wrapper pattern: set, spawn, clear.
        s.prctl_set(p, false).unwrap();
        assert!(s.prctl_query(child).unwrap());
        assert!(!s.prctl_query(p).unwrap());
        assert_eq!(s.task(child).unwrap().parent, Some(p));
    }

    #[test]
    fn preemption_by_unflagged_task() {
        let mut s = Scheduler::new(Topology::single_core(), 4).unwrap();
        let p2 = start(&mut s, CoreId(0));
        let p3 = s.create_task(CoreId(0)).unwrap();
        s.prctl_set(p2, true).unwrap();
        assert!(!s.domain_enabled(DomainId(0)));
        s.context_switch(CoreId(0), p3).unwrap();
        assert!(s.domain_enabled(DomainId(0)));
        s.exit_current(CoreId(0));
        assert_eq!(s.current(CoreId(0)), Some(p2));
        assert!(!s.domain_enabled(DomainId(0)));
        s.check_invariants().unwrap();
    }

    #[test]
    fn switching_between_unflagged_tasks_costs_nothing() {
        let mut s = Scheduler::new(Topology::single_core(), 4).unwrap();
        let _a = start(&mut s, CoreId(0));
        let b = s.create_task(CoreId(0)).unwrap();
        s.context_switch(CoreId(0), b).unwrap();
        s.rotate(CoreId(0));
        assert_eq!(s.toggle_counter(), 0);
        assert_eq!(s.switch_counter(), 2);
    }

    #[test]
    fn switch_to_running_task_rejected() {
        let mut s = Scheduler::new(Topology::single_core(), 4).unwrap();
        let a = start(&mut s, CoreId(0));
        assert_eq!(
            s.context_switch(CoreId(0), a),
            Err(SchedError::NotRunnable(a))
        );
    }

    #[test]
    fn migration_between_domains() {
        let topo = Topology::build(2, 1, DomainGranularity::PerPhysicalCore).unwrap();
        let mut s = Scheduler::new(topo, 4).unwrap();
        let t = start(&mut s, CoreId(0));
        s.prctl_set(t, true).unwrap();
        let toggles = s.toggle_counter();
        s.migrate(t, CoreId(1)).unwrap();
        assert!(s.domain_enabled(DomainId(0)));
        assert!(!s.domain_enabled(DomainId(1)));
        assert_eq!(s.toggle_counter(), toggles + 2);
        assert_eq!(s.current(CoreId(1)), Some(t));
        assert_eq!(s.current(CoreId(0)), None);
        s.check_invariants().unwrap();

        let before = s.toggle_counter();
        s.migrate(t, CoreId(1)).unwrap();
        assert_eq!(s.toggle_counter(), before);
    }

    #[test]
    fn unflagged_migration_changes_nothing() {
        let topo = Topology::build(2, 1, DomainGranularity::PerPhysicalCore).unwrap();
        let mut s = Scheduler::new(topo, 4).unwrap();
        let t = start(&mut s, CoreId(0));
        s.migrate(t, CoreId(1)).unwrap();
        assert_eq!(s.toggle_counter(), 0);
        assert!(s.domain_enabled(DomainId(0)) && s.domain_enabled(DomainId(1)));
    }

    #[test]
    fn migration_within_domain_is_free() {
        let mut s = smt_pair();
        let t = start(&mut s, CoreId(0));
        s.prctl_set(t, true).unwrap();
        let before = s.toggle_counter();
        s.migrate(t, CoreId(1)).unwrap();
        assert_eq!(s.toggle_counter(), before);
        assert!(!s.domain_enabled(DomainId(0)));
        s.check_invariants().unwrap();
    }

    #[test]
    fn queued_task_migrates_to_front() {
        let topo = Topology::build(2, 1, DomainGranularity::PerPhysicalCore).unwrap();
        let mut s = Scheduler::new(topo, 4).unwrap();
        let _a = start(&mut s, CoreId(0));
        let b = s.create_task(CoreId(0)).unwrap();
        let c = s.create_task(CoreId(1)).unwrap();
        s.migrate(b, CoreId(1)).unwrap();
        assert_eq!(
            s.run_queue(CoreId(1)).iter().copied().collect::<Vec<_>>(),
            vec![b, c]
        );
        assert!(s.run_queue(CoreId(0)).is_empty());
    }

    #[test]
    fn law_truth_table_two_cores() {
        let topo = Topology::build(1, 2, DomainGranularity::PerPhysicalCore).unwrap();
        for (a, b, expected) in [
            (false, false, true),
            (false, true, false),
            (true, false, false),
            (true, true, false),
        ] {
            let mut m = DomainMask::new(2);
            m.set(CoreId(0), a);
            m.set(CoreId(1), b);
            assert_eq!(enablement_law(&topo, &m, DomainId(0)), expected);
        }
    }

    #[test]
    fn idle_core_counts_as_unflagged() {
        let mut s = smt_pair();
        let a = start(&mut s, CoreId(0));
        s.prctl_set(a, true).unwrap();
        s.exit_current(CoreId(0));
        assert!(!s.mask().get(CoreId(0)));
        assert!(s.domain_enabled(DomainId(0)));
    }
}
