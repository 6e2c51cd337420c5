//! Executable prefetcher side channels and the leakage metric.
//!
//! Each trial builds a fresh machine, draws a secret from its own RNG
//! stream (`seed`, trial index), runs attacker and victim scripts and lets
//! the attacker guess the secret from its probe. Trials are independent, so
//! they are evaluated in parallel when available; the per-trial streams make
//! the report identical either way.

pub mod catalog;
mod scenarios;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::cache::{CacheGeometry, Latencies, LineState, ProbeSample};
use crate::machine::{AccessRecord, Machine, MachineConfig, MachineError};
use crate::par::{self, Execution};
use crate::prefetch::{PrefetcherConfig, PrefetcherFamily};
use crate::rng::Xorshift64Star;
use crate::sched::{DomainLaw, EnablementPolicy, SchedEvent};
use crate::stage::{ExecContext, Stage, StageLabel};
use crate::stats;
use crate::topology::{DomainGranularity, Topology};

pub use scenarios::*;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("a report needs at least one trial")]
    NoTrials,
    #[error("scenario {scenario} needs the {expected} prefetcher, configured is {configured}")]
    Family {
        scenario: &'static str,
        expected: &'static str,
        configured: &'static str,
    },
    #[error("scenario {scenario} needs at least {needed} logical cores in one sharing domain")]
    Topology {
        scenario: &'static str,
        needed: usize,
    },
    #[error("scenario {scenario} cannot run with this configuration: {reason}")]
    Unsupported {
        scenario: &'static str,
        reason: &'static str,
    },
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Machine(#[from] MachineError),
}

/// Every executable scenario, including the control variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    Shin,
    AfterImageV1,
    /// AfterImage with the attacker's load deliberately not colliding.
    AfterImageV1NoCollision,
    Sms,
    /// SMS with the attacker triggering at a different offset.
    SmsAlias,
    Dmp,
    SmtBypass,
    /// SMT bypass setup where the victim does not protect itself.
    SmtBypassBaseline,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Shin,
        Scenario::AfterImageV1,
        Scenario::AfterImageV1NoCollision,
        Scenario::Sms,
        Scenario::SmsAlias,
        Scenario::Dmp,
        Scenario::SmtBypass,
        Scenario::SmtBypassBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Shin => "shin",
            Scenario::AfterImageV1 => "afterimage_v1",
            Scenario::AfterImageV1NoCollision => "afterimage_v1_no_collision",
            Scenario::Sms => "sms",
            Scenario::SmsAlias => "sms_alias",
            Scenario::Dmp => "dmp",
            Scenario::SmtBypass => "smt_bypass",
            Scenario::SmtBypassBaseline => "smt_bypass_baseline",
        }
    }

    pub fn parse(name: &str) -> Result<Self, AttackError> {
        Scenario::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| AttackError::UnknownScenario(name.to_string()))
    }

    pub fn family(self) -> PrefetcherFamily {
        match self {
            Scenario::Sms | Scenario::SmsAlias => PrefetcherFamily::Sms,
            Scenario::Dmp => PrefetcherFamily::Dmp,
            _ => PrefetcherFamily::IpStride,
        }
    }

    /// Logical cores the scenario needs in one sharing domain.
    pub fn cores_needed(self) -> usize {
        match self {
            Scenario::SmtBypass | Scenario::SmtBypassBaseline => 2,
            _ => 1,
        }
    }

    /// Probability of guessing the secret without any leakage.
    pub fn chance_level(self) -> f64 {
        match self {
            Scenario::Sms | Scenario::SmsAlias => 1.0 / 16.0,
            _ => 0.5,
        }
    }

    /// Stage markers one trial emits, in execution order.
    pub fn declared_flow(self) -> Vec<Stage> {
        use StageLabel::*;
        let a = Stage::attacker;
        let v = Stage::victim;
        match self {
            Scenario::Shin => vec![
                a(S1Prepare),
                a(S2Reset),
                v(S3Train),
                v(S4Trigger),
                a(S5Extract),
            ],
            Scenario::AfterImageV1 | Scenario::AfterImageV1NoCollision => vec![
                a(S1Prepare),
                a(S2Reset),
                a(S3Train),
                v(S3Train),
                a(S4Trigger),
                a(S5Extract),
            ],
            Scenario::Sms | Scenario::SmsAlias => {
                vec![
                    a(S1Prepare),
                    a(S2Reset),
                    v(S3Train),
                    a(S4Trigger),
                    a(S5Extract),
                ]
            }
            Scenario::Dmp => vec![
                a(S1Prepare),
                a(S2Reset),
                v(S3Train),
                v(S4Trigger),
                a(S5Extract),
            ],
            Scenario::SmtBypass | Scenario::SmtBypassBaseline => {
                vec![
                    a(S1Prepare),
                    a(S2Reset),
                    v(S3Train),
                    v(S4Trigger),
                    a(S5Extract),
                ]
            }
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Machine parameters shared by all scenarios. The prefetcher family is
/// checked against the scenario; topology is chosen by the scenario unless
/// a larger one is supplied.
#[derive(Clone, Debug)]
pub struct AttackSettings {
    pub geometry: CacheGeometry,
    pub latencies: Latencies,
    pub prefetcher: Option<PrefetcherConfig>,
    pub topology: Option<Topology>,
    pub quantum: u32,
    pub noise: Option<f64>,
    pub execution: Execution,
    pub policy: Arc<dyn EnablementPolicy>,
    /// Check the scheduler invariants after every event. Must be off when
    /// `policy` deliberately breaks the enablement law.
    pub verify_invariants: bool,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            geometry: CacheGeometry::default(),
            latencies: Latencies::default(),
            prefetcher: None,
            topology: None,
            quantum: 64,
            noise: None,
            execution: Execution::default(),
            policy: Arc::new(DomainLaw),
            verify_invariants: true,
        }
    }
}

impl AttackSettings {
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_policy(mut self, policy: Arc<dyn EnablementPolicy>) -> Self {
        self.policy = policy;
        self
    }

    fn prefetcher_for(&self, scenario: Scenario) -> Result<PrefetcherConfig, AttackError> {
        let expected = scenario.family();
        match &self.prefetcher {
            None => Ok(PrefetcherConfig::for_family(expected)),
            Some(cfg) if cfg.family == expected => Ok(cfg.clone()),
            Some(cfg) => Err(AttackError::Family {
                scenario: scenario.name(),
                expected: expected.as_str(),
                configured: cfg.family.as_str(),
            }),
        }
    }

    fn topology_for(&self, scenario: Scenario) -> Result<Topology, AttackError> {
        let needed = scenario.cores_needed();
        let topo = match &self.topology {
            Some(t) => t.clone(),
            None => Topology::build(1, needed, DomainGranularity::PerPhysicalCore)
                .expect("nonzero counts"),
        };
        if topo.cores_in(crate::topology::DomainId(0)).len() < needed {
            return Err(AttackError::Topology {
                scenario: scenario.name(),
                needed,
            });
        }
        Ok(topo)
    }

    pub(crate) fn machine(
        &self,
        scenario: Scenario,
        trial_seed: u64,
    ) -> Result<Machine, AttackError> {
        let mut cfg =
            MachineConfig::new(self.topology_for(scenario)?, self.prefetcher_for(scenario)?);
        cfg.geometry = self.geometry;
        cfg.latencies = self.latencies;
        cfg.quantum = self.quantum;
        cfg.noise = self.noise.map(|p| (p, trial_seed));
        cfg.verify_invariants = self.verify_invariants;
        Ok(Machine::with_policy(cfg, self.policy.clone())?)
    }

    /// Validates the settings for a scenario without running it.
    pub fn check(&self, scenario: Scenario) -> Result<(), AttackError> {
        self.prefetcher_for(scenario)?;
        self.topology_for(scenario)?;
        Ok(())
    }
}

/// What one trial produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialOutcome {
    pub secret: u64,
    pub guess: u64,
    /// `(class, latency)` pairs for the histogram.
    pub samples: Vec<(String, u32)>,
    pub probe: Vec<ProbeSample>,
    /// Victim-context accesses that changed prefetcher state.
    pub victim_training_mutations: usize,
    pub stages: Vec<Stage>,
    /// `(pc, vaddr)` of every demand load, in execution order.
    pub loads: Vec<(u64, u64)>,
    pub trace: TrialTrace,
}

/// Scheduler-level record of one trial.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrialTrace {
    pub events: Vec<SchedEvent>,
    pub accesses: Vec<AccessRecord>,
    pub switch_counter: u64,
    pub toggle_counter: u64,
    pub disabled_ticks: Vec<u64>,
}

impl TrialOutcome {
    pub(crate) fn from_machine(
        m: &Machine,
        secret: u64,
        guess: u64,
        samples: Vec<(String, u32)>,
    ) -> Self {
        let probe = m
            .probes()
            .iter()
            .flat_map(|p| p.samples.iter().copied())
            .collect();
        let victim_training_mutations = m
            .accesses()
            .iter()
            .filter(|a| a.mutated && a.stage.is_some_and(|s| s.context == ExecContext::Victim))
            .count();
        Self {
            secret,
            guess,
            samples,
            probe,
            victim_training_mutations,
            stages: m.stages().iter().map(|r| r.stage).collect(),
            loads: m.accesses().iter().map(|a| (a.pc, a.vaddr)).collect(),
            trace: TrialTrace {
                events: m.scheduler().events().to_vec(),
                accesses: m.accesses().to_vec(),
                switch_counter: m.scheduler().switch_counter(),
                toggle_counter: m.scheduler().toggle_counter(),
                disabled_ticks: m.disabled_ticks().to_vec(),
            },
        }
    }
}

/// One row of the probe CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProbeRow {
    pub trial: usize,
    pub line_index: usize,
    pub latency: u32,
    pub state: LineState,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeakageReport {
    pub scenario: String,
    pub defended: bool,
    pub trials: usize,
    pub correct: usize,
    pub guess_accuracy: f64,
    pub chance_level: f64,
    /// 99% acceptance interval of guessing, as accuracies.
    pub chance_interval: (f64, f64),
    pub victim_training_mutations: usize,
    pub latency_samples: BTreeMap<String, Vec<u32>>,
    pub stage_trace: Vec<String>,
    #[serde(skip)]
    pub probes: Vec<ProbeRow>,
    /// Scheduler trace of the first trial.
    #[serde(skip)]
    pub first_trial: TrialTrace,
}

impl LeakageReport {
    pub fn from_outcomes(
        scenario: Scenario,
        defended: bool,
        outcomes: &[TrialOutcome],
    ) -> Result<Self, AttackError> {
        if outcomes.is_empty() {
            return Err(AttackError::NoTrials);
        }
        let trials = outcomes.len();
        let correct = outcomes.iter().filter(|o| o.secret == o.guess).count();
        let mut latency_samples: BTreeMap<String, Vec<u32>> = BTreeMap::new();
        let mut probes = Vec::new();
        for (trial, o) in outcomes.iter().enumerate() {
            for (class, lat) in &o.samples {
                latency_samples.entry(class.clone()).or_default().push(*lat);
            }
            probes.extend(o.probe.iter().enumerate().map(|(i, s)| ProbeRow {
                trial,
                line_index: i,
                latency: s.latency,
                state: s.state,
            }));
        }
        let chance = scenario.chance_level();
        Ok(Self {
            scenario: scenario.name().to_string(),
            defended,
            trials,
            correct,
            guess_accuracy: correct as f64 / trials as f64,
            chance_level: chance,
            chance_interval: stats::chance_interval(trials as u64, chance, stats::ALPHA),
            victim_training_mutations: outcomes.iter().map(|o| o.victim_training_mutations).sum(),
            latency_samples,
            stage_trace: outcomes[0].stages.iter().map(|s| s.to_string()).collect(),
            probes,
            first_trial: outcomes[0].trace.clone(),
        })
    }

    /// Accuracy inside the 99% binomial interval of the chance level.
    pub fn at_chance(&self) -> bool {
        stats::consistent_with_chance(
            self.correct as u64,
            self.trials as u64,
            self.chance_level,
            stats::ALPHA,
        )
    }
}

/// Runs `trials` independent trials of `scenario`.
pub fn run_scenario(
    scenario: Scenario,
    defended: bool,
    trials: usize,
    seed: u64,
    settings: &AttackSettings,
) -> Result<LeakageReport, AttackError> {
    if trials == 0 {
        return Err(AttackError::NoTrials);
    }
    settings.check(scenario)?;
    let outcomes = par::map_indexed(settings.execution, trials, |i| {
        let mut rng = Xorshift64Star::for_stream(seed, i as u64);
        run_trial(scenario, defended, &mut rng, settings)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    LeakageReport::from_outcomes(scenario, defended, &outcomes)
}

/// One trial with a secret drawn from `rng`.
pub fn run_trial(
    scenario: Scenario,
    defended: bool,
    rng: &mut Xorshift64Star,
    settings: &AttackSettings,
) -> Result<TrialOutcome, AttackError> {
    let trial_seed = rng.next_u64();
    match scenario {
        Scenario::Shin => {
            let secret = u64::from(rng.bit());
            shin_trial(settings, defended, secret, rng, trial_seed)
        }
        Scenario::AfterImageV1 | Scenario::AfterImageV1NoCollision => {
            let secret = u64::from(rng.bit());
            let collide = scenario == Scenario::AfterImageV1;
            afterimage_v1_trial(settings, defended, collide, secret, trial_seed)
        }
        Scenario::Sms | Scenario::SmsAlias => {
            let secret = rng.below(16);
            let aligned = scenario == Scenario::Sms;
            sms_trial(settings, defended, aligned, secret, trial_seed)
        }
        Scenario::Dmp => {
            let secret = u64::from(rng.bit());
            dmp_trial(settings, defended, secret, trial_seed)
        }
        Scenario::SmtBypass | Scenario::SmtBypassBaseline => {
            let secret = u64::from(rng.bit());
            let protect = scenario == Scenario::SmtBypass;
            smt_bypass_trial(settings, protect, secret, rng, trial_seed)
        }
    }
}

pub fn run_shin(defended: bool, trials: usize, seed: u64) -> Result<LeakageReport, AttackError> {
    run_scenario(
        Scenario::Shin,
        defended,
        trials,
        seed,
        &AttackSettings::default(),
    )
}

pub fn run_afterimage_v1(
    defended: bool,
    trials: usize,
    seed: u64,
) -> Result<LeakageReport, AttackError> {
    run_scenario(
        Scenario::AfterImageV1,
        defended,
        trials,
        seed,
        &AttackSettings::default(),
    )
}

pub fn run_sms(defended: bool, trials: usize, seed: u64) -> Result<LeakageReport, AttackError> {
    run_scenario(
        Scenario::Sms,
        defended,
        trials,
        seed,
        &AttackSettings::default(),
    )
}

pub fn run_dmp(defended: bool, trials: usize, seed: u64) -> Result<LeakageReport, AttackError> {
    run_scenario(
        Scenario::Dmp,
        defended,
        trials,
        seed,
        &AttackSettings::default(),
    )
}

/// The victim protects itself, the attacker on the sibling clears its own
/// flag mid-walk. `settings.policy` selects the enablement rule under test.
pub fn run_smt_bypass_regression(
    trials: usize,
    seed: u64,
    settings: &AttackSettings,
) -> Result<LeakageReport, AttackError> {
    run_scenario(Scenario::SmtBypass, true, trials, seed, settings)
}
