//! The simulation engine: topology, one cache and one prefetcher per sharing
//! domain, word-addressed memory, and the scheduler driving scripted tasks.
//!
//! Each tick visits the logical cores in id order; the task running on a
//! core executes one action of its script. SMT siblings therefore run
//! interleaved within a tick. Stage markers are free and do not consume the
//! tick. After every scheduler event the prefetcher enable bits are copied
//! from the scheduler, so the enablement law is in force before the next
//! action of any task.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{Cache, CacheGeometry, GeometryError, Latencies, ProbeSample, RandomFlushNoise};
use crate::prefetch::{
    MemoryAccess, PrefetchRequest, Prefetcher, PrefetcherConfig, PrefetcherConfigError, WORD_SIZE,
};
use crate::sched::{
    DomainLaw, EnablementPolicy, InvariantViolation, SchedError, Scheduler, TaskId,
};
use crate::stage::Stage;
use crate::topology::{CoreId, DomainId, Topology};

/// Time charged for one flag change through the control call.
pub const DEFAULT_PRCTL_COST: u64 = 430;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Load {
        pc: u64,
        addr: u64,
    },
    /// Writes one word of memory. Does not touch the cache.
    Store {
        addr: u64,
        value: u64,
    },
    /// Measurement operations act on the cache only; the prefetcher does
    /// not see them.
    Flush(Vec<u64>),
    Prime(Vec<u64>),
    Probe {
        label: String,
        addrs: Vec<u64>,
    },
    /// Sets (`true`) or clears the running task's prefetch-disable flag.
    Prctl(bool),
    Spawn(Program),
    Migrate(CoreId),
    Yield,
    /// Non-memory work worth the given number of cycles.
    Compute(u64),
    Stage(Stage),
    End,
}

pub type Program = Vec<Action>;

#[derive(Debug, Error)]
pub enum MachineError {
    #[error(transparent)]
    Sched(#[from] SchedError),
    #[error("invariant violated: {0}")]
    Invariant(#[from] InvariantViolation),
    #[error(transparent)]
    Prefetcher(#[from] PrefetcherConfigError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("simulation did not finish within {0} ticks")]
    StepLimit(u64),
}

#[derive(Clone, Debug)]
pub struct MachineConfig {
    pub topology: Topology,
    pub geometry: CacheGeometry,
    pub latencies: Latencies,
    pub prefetcher: PrefetcherConfig,
    pub quantum: u32,
    pub prctl_cost: u64,
    /// Probability and seed of the random-flush measurement noise.
    pub noise: Option<(f64, u64)>,
    /// Check the scheduler invariants after every event.
    pub verify_invariants: bool,
}

impl MachineConfig {
    pub fn new(topology: Topology, prefetcher: PrefetcherConfig) -> Self {
        Self {
            topology,
            geometry: CacheGeometry::default(),
            latencies: Latencies::default(),
            prefetcher,
            quantum: 8,
            prctl_cost: DEFAULT_PRCTL_COST,
            noise: None,
            verify_invariants: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub tick: u64,
    pub core: CoreId,
    pub task: TaskId,
    pub pc: u64,
    pub vaddr: u64,
    pub latency: u32,
    pub requests_emitted: usize,
    /// Whether the access changed the domain prefetcher's state.
    pub mutated: bool,
    /// Most recent stage marker of the task, if any.
    pub stage: Option<Stage>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub tick: u64,
    pub task: TaskId,
    pub label: String,
    pub samples: Vec<ProbeSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub tick: u64,
    pub task: TaskId,
    pub stage: Stage,
}

pub struct Machine {
    topology: Topology,
    caches: Vec<Cache>,
    prefetchers: Vec<Prefetcher>,
    memory: HashMap<u64, u64>,
    sched: Scheduler,
    programs: Vec<Program>,
    cursors: Vec<usize>,
    current_stage: Vec<Option<Stage>>,
    cycles: Vec<u64>,
    tick: u64,
    prctl_cost: u64,
    verify: bool,
    accesses: Vec<AccessRecord>,
    probes: Vec<ProbeRecord>,
    stages: Vec<StageRecord>,
    disabled_ticks: Vec<u64>,
}

enum Outcome {
    Continue,
    Yield,
    End,
    Moved,
}

impl Machine {
    pub fn new(config: MachineConfig) -> Result<Self, MachineError> {
        Self::with_policy(config, Arc::new(DomainLaw))
    }

    pub fn with_policy(
        config: MachineConfig,
        policy: Arc<dyn EnablementPolicy>,
    ) -> Result<Self, MachineError> {
        let domains = config.topology.domain_count();
        let prefetcher_cfg = config
            .prefetcher
            .clone()
            .with_line_size(config.geometry.line_size);
        let prefetchers = (0..domains)
            .map(|_| Prefetcher::new(&prefetcher_cfg))
            .collect::<Result<Vec<_>, _>>()?;
        let caches = (0..domains)
            .map(|d| {
                let cache = Cache::new(config.geometry, config.latencies)?;
                Ok(match config.noise {
                    Some((p, seed)) => cache.with_noise(RandomFlushNoise::new(p, seed ^ d as u64)),
                    None => cache,
                })
            })
            .collect::<Result<Vec<_>, GeometryError>>()?;
        let sched = Scheduler::with_policy(config.topology.clone(), config.quantum, policy)?;
        Ok(Self {
            topology: config.topology,
            caches,
            prefetchers,
            memory: HashMap::new(),
            sched,
            programs: Vec::new(),
            cursors: Vec::new(),
            current_stage: Vec::new(),
            cycles: Vec::new(),
            tick: 0,
            prctl_cost: config.prctl_cost,
            verify: config.verify_invariants,
            accesses: Vec::new(),
            probes: Vec::new(),
            stages: Vec::new(),
            disabled_ticks: vec![0; domains],
        })
    }

    /// Adds a parentless task (flag clear) to `core`'s run queue.
    pub fn add_task(&mut self, core: CoreId, program: Program) -> Result<TaskId, MachineError> {
        self.add_task_with(core, program, false, false)
    }

    pub fn add_task_with(
        &mut self,
        core: CoreId,
        program: Program,
        prefetch_disable: bool,
        privileged: bool,
    ) -> Result<TaskId, MachineError> {
        let tid = self
            .sched
            .create_task_with(core, prefetch_disable, privileged)?;
        self.register(tid, program);
        Ok(tid)
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    pub fn scheduler_mut(&mut self) -> &mut Scheduler {
        &mut self.sched
    }

    pub fn cache(&self, domain: DomainId) -> &Cache {
        &self.caches[domain.0]
    }

    pub fn cache_mut(&mut self, domain: DomainId) -> &mut Cache {
        &mut self.caches[domain.0]
    }

    pub fn prefetcher(&self, domain: DomainId) -> &Prefetcher {
        &self.prefetchers[domain.0]
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn write_word(&mut self, addr: u64, value: u64) {
        self.memory.insert(addr & !(WORD_SIZE - 1), value);
    }

    pub fn read_word(&self, addr: u64) -> u64 {
        self.memory
            .get(&(addr & !(WORD_SIZE - 1)))
            .copied()
            .unwrap_or(0)
    }

    pub fn accesses(&self) -> &[AccessRecord] {
        &self.accesses
    }

    pub fn probes(&self) -> &[ProbeRecord] {
        &self.probes
    }

    pub fn stages(&self) -> &[StageRecord] {
        &self.stages
    }

    /// Stage markers executed by one task, in order.
    pub fn stage_trace(&self, task: TaskId) -> Vec<Stage> {
        self.stages
            .iter()
            .filter(|r| r.task == task)
            .map(|r| r.stage)
            .collect()
    }

    pub fn cycles(&self, task: TaskId) -> u64 {
        self.cycles[task.0]
    }

    pub fn total_cycles(&self) -> u64 {
        self.cycles.iter().sum()
    }

    /// Ticks during which each domain's prefetcher was disabled.
    pub fn disabled_ticks(&self) -> &[u64] {
        &self.disabled_ticks
    }

    pub fn is_done(&self) -> bool {
        self.sched.all_finished()
    }

    pub fn run(&mut self, max_ticks: u64) -> Result<u64, MachineError> {
        while !self.is_done() {
            if self.tick >= max_ticks {
                return Err(MachineError::StepLimit(max_ticks));
            }
            self.step()?;
        }
        Ok(self.tick)
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<(), MachineError> {
        self.sched.set_tick(self.tick);
        let mut ran = vec![false; self.programs.len()];
        for core in self.topology.cores().collect::<Vec<_>>() {
            if self.sched.current(core).is_none() && self.sched.rotate(core).is_some() {
                self.after_event()?;
            }
            let Some(tid) = self.sched.current(core) else {
                continue;
            };
            if ran[tid.0] {
                continue;
            }
            ran[tid.0] = true;
            self.sched.record_run(core, tid);
            match self.execute(core, tid)? {
                Outcome::Continue => {
                    if self.sched.charge_tick(core) {
                        self.rotate_or_renew(core)?;
                    }
                }
                Outcome::Yield => self.rotate_or_renew(core)?,
                Outcome::End => {
                    self.sched.exit_current(core);
                    self.after_event()?;
                }
                Outcome::Moved => {}
            }
        }
        for d in self.topology.domains() {
            if !self.sched.domain_enabled(d) {
                self.disabled_ticks[d.0] += 1;
            }
        }
        self.tick += 1;
        Ok(())
    }

    fn rotate_or_renew(&mut self, core: CoreId) -> Result<(), MachineError> {
        if self.sched.run_queue(core).is_empty() {
            self.sched.renew_slice(core);
            Ok(())
        } else {
            self.sched.rotate(core);
            self.after_event()
        }
    }

    fn register(&mut self, tid: TaskId, program: Program) {
        debug_assert_eq!(tid.0, self.programs.len());
        self.programs.push(program);
        self.cursors.push(0);
        self.current_stage.push(None);
        self.cycles.push(0);
    }

    // Runs stage markers for free, then one real action.
    fn execute(&mut self, core: CoreId, tid: TaskId) -> Result<Outcome, MachineError> {
        let action = loop {
            let Some(action) = self.programs[tid.0].get(self.cursors[tid.0]).cloned() else {
                return Ok(Outcome::End);
            };
            self.cursors[tid.0] += 1;
            match action {
                Action::Stage(stage) => {
                    self.current_stage[tid.0] = Some(stage);
                    self.stages.push(StageRecord {
                        tick: self.tick,
                        task: tid,
                        stage,
                    });
                }
                other => break other,
            }
        };
        let domain = self.topology.sharing_domain_of(core).expect("valid core");
        let d = domain.0;
        let outcome = match action {
            Action::Load { pc, addr } => {
                self.load(core, tid, domain, pc, addr);
                Outcome::Continue
            }
            Action::Store { addr, value } => {
                self.write_word(addr, value);
                Outcome::Continue
            }
            Action::Flush(addrs) => {
                for a in addrs {
                    self.caches[d].flush(a);
                }
                Outcome::Continue
            }
            Action::Prime(addrs) => {
                for a in addrs {
                    self.cycles[tid.0] += u64::from(self.caches[d].access(a));
                }
                Outcome::Continue
            }
            Action::Probe { label, addrs } => {
                let result = self.caches[d].probe(&addrs);
                self.cycles[tid.0] += result
                    .samples
                    .iter()
                    .map(|s| u64::from(s.latency))
                    .sum::<u64>();
                self.probes.push(ProbeRecord {
                    tick: self.tick,
                    task: tid,
                    label,
                    samples: result.samples,
                });
                Outcome::Continue
            }
            Action::Prctl(on) => {
                self.sched.prctl_set(tid, on)?;
                self.cycles[tid.0] += self.prctl_cost;
                self.after_event()?;
                Outcome::Continue
            }
            Action::Spawn(program) => {
                let child = self.sched.spawn(tid)?;
                self.register(child, program);
                Outcome::Continue
            }
            Action::Migrate(to) => {
                let before = self.sched.current(core);
                self.sched.migrate(tid, to)?;
                self.after_event()?;
                if before == self.sched.current(core) {
                    Outcome::Continue
                } else {
                    Outcome::Moved
                }
            }
            Action::Yield => Outcome::Yield,
            Action::Compute(c) => {
                self.cycles[tid.0] += c;
                Outcome::Continue
            }
            Action::End => Outcome::End,
            Action::Stage(_) => unreachable!("markers handled above"),
        };
        if matches!(outcome, Outcome::Continue) && self.cursors[tid.0] >= self.programs[tid.0].len()
        {
            return Ok(Outcome::End);
        }
        Ok(outcome)
    }

    fn load(&mut self, core: CoreId, tid: TaskId, domain: DomainId, pc: u64, addr: u64) {
        let d = domain.0;
        let latency = self.caches[d].access(addr);
        self.cycles[tid.0] += u64::from(latency);
        let geometry = *self.caches[d].geometry();
        let base = geometry.line_base(addr);
        let words: Vec<u64> = (0..geometry.line_size / WORD_SIZE)
            .map(|i| self.read_word(base + i * WORD_SIZE))
            .collect();
        let acc = MemoryAccess {
            pc,
            vaddr: addr,
            value: self.memory.get(&(addr & !(WORD_SIZE - 1))).copied(),
            core,
            task: tid,
        };
        let before = self.prefetchers[d].clone();
        let requests: Vec<PrefetchRequest> = self.prefetchers[d]
            .observe(&acc, &words)
            .into_iter()
            .filter(|r| !geometry.same_line(r.target, addr))
            .collect();
        let mutated = before != self.prefetchers[d];
        for r in &requests {
            self.caches[d].install(r.target);
        }
        self.accesses.push(AccessRecord {
            tick: self.tick,
            core,
            task: tid,
            pc,
            vaddr: addr,
            latency,
            requests_emitted: requests.len(),
            mutated,
            stage: self.current_stage[tid.0],
        });
    }

    // Copies the scheduler's enablement decisions into the prefetchers.
    fn after_event(&mut self) -> Result<(), MachineError> {
        for d in self.topology.domains() {
            let on = self.sched.domain_enabled(d);
            if self.prefetchers[d.0].is_enabled() != on {
                self.prefetchers[d.0].set_enabled(on);
            }
        }
        if self.verify {
            self.sched.check_invariants()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prefetch::PrefetcherFamily;
    use crate::topology::DomainGranularity;

    fn machine(phys: usize, smt: usize, quantum: u32) -> Machine {
        let topo = Topology::build(phys, smt, DomainGranularity::PerPhysicalCore).unwrap();
        let mut cfg = MachineConfig::new(
            topo,
            PrefetcherConfig::for_family(PrefetcherFamily::IpStride),
        );
        cfg.quantum = quantum;
        Machine::new(cfg).unwrap()
    }

    fn walk(pc: u64, base: u64, n: u64) -> Program {
        (0..n)
            .map(|i| Action::Load {
                pc,
                addr: base + i * 64,
            })
            .collect()
    }

    #[test]
    fn single_task_runs_without_switches() {
        let mut m = machine(1, 1, 3);
        m.add_task(CoreId(0), walk(0x400, 0x1000, 10)).unwrap();
        assert_eq!(m.run(100).unwrap(), 10);
        assert_eq!(m.scheduler().switch_counter(), 0);
    }

    #[test]
    fn round_robin_quantum_pattern() {
        let mut m = machine(1, 1, 3);
        let a = m.add_task(CoreId(0), vec![Action::Compute(1); 9]).unwrap();
        let b = m.add_task(CoreId(0), vec![Action::Compute(1); 6]).unwrap();
        let mut order = Vec::new();
        while !m.is_done() {
            m.step().unwrap();
            let last = m
                .scheduler()
                .events()
                .iter()
                .rev()
                .find(|e| e.kind == crate::sched::EventKind::Run);
            order.push(last.unwrap().tid.unwrap());
        }
        let expect: Vec<TaskId> = [a, a, a, b, b, b, a, a, a, b, b, b, a, a, a].to_vec();
        assert_eq!(order, expect);
    }

    #[test]
    fn idle_core_keeps_domain_enabled() {
        let mut m = machine(1, 2, 3);
        m.add_task(CoreId(0), walk(0x400, 0x1000, 2)).unwrap();
        m.step().unwrap();
        assert!(!m.scheduler().mask().get(CoreId(1)));
        assert!(m.prefetcher(DomainId(0)).is_enabled());
    }

    #[test]
    fn prefetch_fills_reach_cache() {
        let mut m = machine(1, 1, 8);
        m.add_task(CoreId(0), walk(0x400, 0x1000, 4)).unwrap();
        m.run(100).unwrap();
        assert!(m.cache(DomainId(0)).contains(0x1100));
        let emitted: Vec<usize> = m.accesses().iter().map(|a| a.requests_emitted).collect();
        assert_eq!(emitted, vec![0, 0, 1, 1]);
    }

    #[test]
    fn protected_walk_leaves_no_trace() {
        let mut m = machine(1, 1, 8);
        let mut prog = vec![Action::Prctl(true)];
        prog.extend(walk(0x400, 0x1000, 4));
        prog.push(Action::Prctl(false));
        let t = m.add_task(CoreId(0), prog).unwrap();
        m.run(100).unwrap();
        assert!(!m.cache(DomainId(0)).contains(0x1100));
        assert!(m
            .accesses()
            .iter()
            .all(|a| !a.mutated && a.requests_emitted == 0));
        assert_eq!(m.scheduler().toggle_counter(), 2);
        assert_eq!(m.disabled_ticks()[0], 5);
        assert_eq!(m.cycles(t), 2 * DEFAULT_PRCTL_COST + 4 * 340);
    }

    #[test]
    fn flag_change_reaches_sibling_within_tick() {
        let mut m = machine(1, 2, 8);
        m.add_task(CoreId(0), vec![Action::Prctl(true), Action::Compute(1)])
            .unwrap();
        m.add_task(CoreId(1), walk(0x400, 0x1000, 2)).unwrap();
        m.step().unwrap();
        let acc = &m.accesses()[0];
        assert_eq!(acc.core, CoreId(1));
        assert!(!acc.mutated);
    }

    #[test]
    fn spawn_inherits_and_runs_child() {
        let mut m = machine(1, 1, 8);
        let child_prog = walk(0x400, 0x1000, 4);
        let parent = m
            .add_task(
                CoreId(0),
                vec![
                    Action::Prctl(true),
                    Action::Spawn(child_prog),
                    Action::Prctl(false),
                ],
            )
            .unwrap();
        m.run(100).unwrap();
        let child = TaskId(parent.0 + 1);
        assert!(m.scheduler().prctl_query(child).unwrap());
        assert!(!m.scheduler().prctl_query(parent).unwrap());
        assert!(!m.cache(DomainId(0)).contains(0x1100));
    }

    #[test]
    fn migration_action_moves_task() {
        let mut m = machine(2, 1, 8);
        let t = m
            .add_task(
                CoreId(0),
                vec![
                    Action::Prctl(true),
                    Action::Migrate(CoreId(1)),
                    Action::Compute(1),
                ],
            )
            .unwrap();
        m.step().unwrap();
        m.step().unwrap();
        assert_eq!(m.scheduler().current(CoreId(1)), Some(t));
        assert!(m.prefetcher(DomainId(0)).is_enabled());
        assert!(!m.prefetcher(DomainId(1)).is_enabled());
        m.run(10).unwrap();
    }

    #[test]
    fn step_limit_reported() {
        let mut m = machine(1, 1, 8);
        m.add_task(CoreId(0), vec![Action::Compute(1); 20]).unwrap();
        assert!(matches!(m.run(5), Err(MachineError::StepLimit(5))));
    }
}
