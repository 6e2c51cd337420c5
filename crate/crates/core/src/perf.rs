//! Cycle model of the defense's cost: total cycles of a workload under an
//! always-enabled prefetcher, an always-disabled one, and with only the
//! critical section protected by the flag.

use std::fmt;

use serde::Serialize;

use crate::attack::irregular_permutation;
use crate::machine::{Action, Machine, MachineConfig, MachineError, Program};
use crate::par::{self, Execution};
use crate::prefetch::{PrefetcherConfig, PrefetcherFamily};
use crate::rng::Xorshift64Star;
use crate::topology::{CoreId, Topology};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Workload {
    /// One long sequential scan.
    Streaming,
    /// Dependent loads in an order no stride predicts.
    PointerChase,
    /// Requests made of a short table-driven crypto phase and a long
    /// streaming application phase.
    MixedCryptoApp,
}

impl Workload {
    pub const ALL: [Workload; 3] = [
        Workload::Streaming,
        Workload::PointerChase,
        Workload::MixedCryptoApp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Workload::Streaming => "streaming",
            Workload::PointerChase => "pointer_chase",
            Workload::MixedCryptoApp => "mixed_crypto_app",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Workload::ALL.into_iter().find(|w| w.as_str() == s)
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PerfMode {
    Enabled,
    Disabled,
    FlagScoped,
}

impl PerfMode {
    pub const ALL: [PerfMode; 3] = [PerfMode::Enabled, PerfMode::Disabled, PerfMode::FlagScoped];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PerfParams {
    pub streaming_lines: u64,
    pub chase_lines: u64,
    pub requests: u64,
    pub crypto_accesses: u64,
    pub app_accesses: u64,
    pub seed: u64,
}

impl Default for PerfParams {
    fn default() -> Self {
        Self {
            streaming_lines: 10_000,
            chase_lines: 2_000,
            requests: 20,
            crypto_accesses: 100,
            app_accesses: 900,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerfModelResult {
    pub workload: Workload,
    pub accesses: u64,
    pub cycles_enabled: u64,
    pub cycles_disabled: u64,
    pub cycles_flag_scoped: u64,
    pub critical_fraction: f64,
    pub toggles_flag_scoped: u64,
}

impl PerfModelResult {
    /// Extra cycles of the scoped run over the enabled run, as a fraction
    /// of the enabled/disabled gap.
    pub fn scoped_overhead_share(&self) -> f64 {
        let gap = self.cycles_disabled.saturating_sub(self.cycles_enabled);
        if gap == 0 {
            return 0.0;
        }
        self.cycles_flag_scoped.saturating_sub(self.cycles_enabled) as f64 / gap as f64
    }
}

const STREAM_BASE: u64 = 0x100_0000;
const STREAM_PC: u64 = 0x40_1010;
const CHASE_BASE: u64 = 0x200_0000;
const CHASE_PC: u64 = 0x40_1020;
const CRYPTO_TABLE: u64 = 0x300_0000;
const CRYPTO_PC: u64 = 0x40_1030;
const APP_BASE: u64 = 0x400_0000;
const APP_PC: u64 = 0x40_1040;

struct Trace {
    program: Program,
    accesses: u64,
    critical: u64,
}

fn trace(workload: Workload, scoped: bool, p: &PerfParams, line: u64) -> Trace {
    let load = |pc, addr| Action::Load { pc, addr };
    match workload {
        Workload::Streaming => Trace {
            program: (0..p.streaming_lines)
                .map(|i| load(STREAM_PC, STREAM_BASE + i * line))
                .collect(),
            accesses: p.streaming_lines,
            critical: 0,
        },
        Workload::PointerChase => {
            let mut rng = Xorshift64Star::new(p.seed);
            Trace {
                program: irregular_permutation(p.chase_lines, &mut rng)
                    .into_iter()
                    .map(|i| load(CHASE_PC, CHASE_BASE + i * line))
                    .collect(),
                accesses: p.chase_lines,
                critical: 0,
            }
        }
        Workload::MixedCryptoApp => {
            let mut program = Vec::new();
            let mut app_line = 0;
            for _ in 0..p.requests {
                if scoped {
                    program.push(Action::Prctl(true));
                }
                program.extend(
                    (0..p.crypto_accesses).map(|i| load(CRYPTO_PC, CRYPTO_TABLE + i * line)),
                );
                if scoped {
                    program.push(Action::Prctl(false));
                }
                program.extend(
                    (0..p.app_accesses).map(|i| load(APP_PC, APP_BASE + (app_line + i) * line)),
                );
                app_line += p.app_accesses;
            }
            Trace {
                program,
                accesses: p.requests * (p.crypto_accesses + p.app_accesses),
                critical: p.requests * p.crypto_accesses,
            }
        }
    }
}

/// Total cycles and toggle count of one workload under one mode.
pub fn run_perf_mode(
    workload: Workload,
    mode: PerfMode,
    params: &PerfParams,
) -> Result<(u64, u64), MachineError> {
    let cfg = MachineConfig::new(
        Topology::single_core(),
        PrefetcherConfig::for_family(PrefetcherFamily::IpStride),
    );
    let line = cfg.geometry.line_size;
    let mut m = Machine::new(cfg)?;
    let t = trace(workload, mode == PerfMode::FlagScoped, params, line);
    let len = t.program.len() as u64;
    let tid = m.add_task_with(CoreId(0), t.program, mode == PerfMode::Disabled, false)?;
    m.run(len + 1)?;
    Ok((m.cycles(tid), m.scheduler().toggle_counter()))
}

pub fn run_perf_model(
    workload: Workload,
    params: &PerfParams,
    exec: Execution,
) -> Result<PerfModelResult, MachineError> {
    let runs = par::map_slice(exec, &PerfMode::ALL, |&mode| {
        run_perf_mode(workload, mode, params)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let t = trace(workload, false, params, 64);
    Ok(PerfModelResult {
        workload,
        accesses: t.accesses,
        cycles_enabled: runs[0].0,
        cycles_disabled: runs[1].0,
        cycles_flag_scoped: runs[2].0,
        critical_fraction: t.critical as f64 / t.accesses as f64,
        toggles_flag_scoped: runs[2].1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PerfParams {
        PerfParams {
            streaming_lines: 100,
            chase_lines: 100,
            requests: 3,
            crypto_accesses: 10,
            app_accesses: 90,
            seed: 4,
        }
    }

    #[test]
    fn streaming_benefits() {
        let r = run_perf_model(Workload::Streaming, &small(), Execution::Sequential).unwrap();
        assert!(r.cycles_enabled < r.cycles_disabled);
        assert_eq!(r.cycles_flag_scoped, r.cycles_enabled);
        assert_eq!(r.cycles_disabled, 100 * 340);
    }

    #[test]
    fn chase_gains_nothing() {
        let r = run_perf_model(Workload::PointerChase, &small(), Execution::Sequential).unwrap();
        assert_eq!(r.cycles_enabled, r.cycles_disabled);
    }

    #[test]
    fn mixed_is_ordered() {
        let r = run_perf_model(Workload::MixedCryptoApp, &small(), Execution::Sequential).unwrap();
        assert!(r.cycles_enabled <= r.cycles_flag_scoped);
        assert!(r.cycles_flag_scoped <= r.cycles_disabled);
        assert_eq!(r.toggles_flag_scoped, 6);
        assert!((r.critical_fraction - 0.1).abs() < 1e-12);
    }
}
