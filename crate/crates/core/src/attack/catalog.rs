//! Declarative catalog of the known prefetcher attacks, each reduced to its
//! sequence of stages, and the validator for the mandatory-stage rule: every
//! attack trains (S3), triggers (S4) and extracts (S5), and side channels
//! train inside the victim context.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::prefetch::PrefetcherFamily;
use crate::stage::{ExecContext, Stage, StageLabel};

use super::Scenario;

/// Who leaks to whom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Scope {
    /// Same process.
    SP,
    /// Cross thread.
    CT,
    /// Cross process.
    CP,
    /// Kernel to user.
    KU,
    /// Trusted execution environment to OS.
    TO,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::SP => "SP",
            Scope::CT => "CT",
            Scope::CP => "CP",
            Scope::KU => "KU",
            Scope::TO => "TO",
        }
    }
}

/// Where a stage entry comes from: stated in an attack description, or
/// inferred (typically a NOP where the description is silent).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageSource {
    Described,
    Inferred,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FlowStage {
    pub stage: Stage,
    pub source: StageSource,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackFlow {
    pub name: String,
    pub family: PrefetcherFamily,
    pub scopes: Vec<Scope>,
    pub stages: Vec<FlowStage>,
    pub side_channel: bool,
    /// Scenario reproducing this attack, if any.
    pub executable: Option<Scenario>,
}

impl AttackFlow {
    pub fn stage_sequence(&self) -> Vec<Stage> {
        self.stages.iter().map(|s| s.stage).collect()
    }

    pub fn scope_label(&self) -> String {
        self.scopes
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Vendor-qualified name of a prefetcher family as used in attack surveys.
pub fn family_label(family: PrefetcherFamily) -> &'static str {
    match family {
        PrefetcherFamily::IpStride => "Intel IP stride",
        PrefetcherFamily::Sms => "ARM SMS",
        PrefetcherFamily::Dmp => "Apple DMP",
        PrefetcherFamily::Xpt => "Intel XPT",
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    MissingStage(StageLabel),
    TrainingOutsideVictim,
    NoScope,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingStage(l) => write!(f, "mandatory stage {l} missing"),
            Violation::TrainingOutsideVictim => {
                f.write_str("side channel never trains the prefetcher in the victim context")
            }
            Violation::NoScope => f.write_str("no scope label"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlowViolation {
    pub flow: String,
    pub violation: Violation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CatalogReport {
    pub flows: usize,
    pub valid: usize,
    pub violations: Vec<FlowViolation>,
    pub family_counts: BTreeMap<String, usize>,
    pub scope_counts: BTreeMap<String, usize>,
}

impl CatalogReport {
    pub fn all_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        format!("{}/{} flows valid", self.valid, self.flows)
    }
}

pub fn check_flow(flow: &AttackFlow) -> Vec<Violation> {
    let mut out = Vec::new();
    for label in [
        StageLabel::S3Train,
        StageLabel::S4Trigger,
        StageLabel::S5Extract,
    ] {
        if !flow.stages.iter().any(|s| s.stage.label == label) {
            out.push(Violation::MissingStage(label));
        }
    }
    let victim_trains = flow
        .stages
        .iter()
        .any(|s| s.stage.label == StageLabel::S3Train && s.stage.context == ExecContext::Victim);
    if flow.side_channel && !victim_trains {
        out.push(Violation::TrainingOutsideVictim);
    }
    if flow.scopes.is_empty() {
        out.push(Violation::NoScope);
    }
    out
}

pub fn validate_catalog(flows: &[AttackFlow]) -> CatalogReport {
    let mut violations = Vec::new();
    let mut valid = 0;
    let mut family_counts = BTreeMap::new();
    let mut scope_counts = BTreeMap::new();
    for flow in flows {
        let found = check_flow(flow);
        if found.is_empty() {
            valid += 1;
        }
        violations.extend(found.into_iter().map(|violation| FlowViolation {
            flow: flow.name.clone(),
            violation,
        }));
        *family_counts
            .entry(family_label(flow.family).to_string())
            .or_insert(0) += 1;
        for s in &flow.scopes {
            *scope_counts.entry(s.as_str().to_string()).or_insert(0) += 1;
        }
    }
    CatalogReport {
        flows: flows.len(),
        valid,
        violations,
        family_counts,
        scope_counts,
    }
}

struct Row {
    name: &'static str,
    family: PrefetcherFamily,
    scopes: &'static [Scope],
    stages: &'static [(StageLabel, ExecContext, StageSource)],
    executable: Option<Scenario>,
}

use ExecContext::{Attacker as A, Victim as V};
use StageLabel::*;
use StageSource::{Described as D, Inferred as I};

const ROWS: [Row; 13] = [
    Row {
        name: "Shin et al.",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::CP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: Some(Scenario::Shin),
    },
    Row {
        name: "Augury OOB",
        family: PrefetcherFamily::Dmp,
        scopes: &[Scope::SP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "Augury SLH",
        family: PrefetcherFamily::Dmp,
        scopes: &[Scope::SP],
        stages: &[
            (Nop, A, I),
            (Nop, A, I),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "Augury Addr.",
        family: PrefetcherFamily::Dmp,
        scopes: &[Scope::SP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "AfterImage Var. 1",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::CT, Scope::CP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: Some(Scenario::AfterImageV1),
    },
    Row {
        name: "AfterImage Var. 2",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::KU],
        stages: &[
            (S1Prepare, A, D),
            (Nop, A, I),
            (S3Train, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "AfterImage SGX",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::TO],
        stages: &[
            (Nop, A, I),
            (Nop, A, I),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "AfterImage RSA",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::CT],
        stages: &[
            (S1Prepare, A, D),
            (Nop, A, I),
            (S3Train, A, D),
            (S3Train, V, D),
            (S4Trigger, A, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "AfterImage Sync",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::CP],
        stages: &[
            (S1Prepare, A, D),
            (Nop, A, I),
            (S3Train, A, D),
            (S3Train, V, D),
            (S4Trigger, A, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "Xiao et al.",
        family: PrefetcherFamily::IpStride,
        scopes: &[Scope::SP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "FetchBench AES",
        family: PrefetcherFamily::Sms,
        scopes: &[Scope::CP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, V, D),
            (S4Trigger, A, D),
            (S5Extract, A, D),
        ],
        executable: Some(Scenario::Sms),
    },
    Row {
        name: "PrefetchX",
        family: PrefetcherFamily::Xpt,
        scopes: &[Scope::CP],
        stages: &[
            (Nop, A, I),
            (S2Reset, A, D),
            (S3Train, A, D),
            (S3Train, V, D),
            (S4Trigger, A, D),
            (S5Extract, A, D),
        ],
        executable: None,
    },
    Row {
        name: "GoFetch",
        family: PrefetcherFamily::Dmp,
        scopes: &[Scope::CP],
        stages: &[
            (S1Prepare, A, D),
            (S2Reset, A, D),
            (S3Train, V, D),
            (S4Trigger, V, D),
            (S5Extract, A, D),
        ],
        executable: Some(Scenario::Dmp),
    },
];

/// The shipped catalog of known attacks.
pub fn catalog() -> Vec<AttackFlow> {
    ROWS.iter()
        .map(|r| AttackFlow {
            name: r.name.to_string(),
            family: r.family,
            scopes: r.scopes.to_vec(),
            stages: r
                .stages
                .iter()
                .map(|&(label, context, source)| FlowStage {
                    stage: Stage::new(label, context),
                    source,
                })
                .collect(),
            side_channel: true,
            executable: r.executable,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_catalog_is_valid() {
        let report = validate_catalog(&catalog());
        assert!(report.all_valid(), "{:?}", report.violations);
        assert_eq!(report.summary(), "13/13 flows valid");
    }

    #[test]
    fn missing_trigger_rejected() {
        let mut flows = catalog();
        flows[0].stages.retain(|s| s.stage.label != S4Trigger);
        let report = validate_catalog(&flows);
        assert_eq!(report.valid, 12);
        assert_eq!(
            report.violations[0].violation,
            Violation::MissingStage(S4Trigger)
        );
        assert_eq!(report.violations[0].flow, "Shin et al.");
    }

    #[test]
    fn attacker_only_training_rejected() {
        let mut flow = catalog().remove(0);
        for s in &mut flow.stages {
            if s.stage.label == S3Train {
                s.stage.context = A;
            }
        }
        assert_eq!(check_flow(&flow), vec![Violation::TrainingOutsideVictim]);
        flow.side_channel = false;
        assert!(check_flow(&flow).is_empty());
    }

    #[test]
    fn nop_entries_are_marked_inferred() {
        for flow in catalog() {
            for s in &flow.stages {
                if s.stage.label == Nop {
                    assert_eq!(s.source, I, "{}", flow.name);
                }
            }
        }
    }
}
