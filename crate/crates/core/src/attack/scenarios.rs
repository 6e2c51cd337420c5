use crate::cache::{build_eviction_set, LineState};
use crate::machine::{Action, Machine, Program};
use crate::rng::Xorshift64Star;
use crate::stage::{Stage, StageLabel};
use crate::topology::CoreId;

use super::{AttackError, AttackSettings, Scenario, TrialOutcome};

const MAX_TICKS: u64 = 100_000;

const TABLE: u64 = 0x10_0000;
const TABLE_LINES: u64 = 16;
const TABLE_PC: u64 = 0x40_1230;

const AI_BASE: u64 = 0x20_0000;
const AI_ATTACKER_PC: u64 = 0x4000_10A0;
const AI_ATTACKER_PC_OTHER: u64 = 0x4000_10C4;
const AI_TAKEN_PC: u64 = 0x5000_20A0;
const AI_SKIPPED_PC: u64 = 0x5000_20B4;
const AI_TAKEN_ADDR: u64 = 0x30_0040;
const AI_SKIPPED_ADDR: u64 = 0x30_0080;

const SMS_VICTIM_REGION: u64 = 0x10_0000;
const SMS_ATTACKER_REGION: u64 = 0x20_0000;
const SMS_VICTIM_PC: u64 = 0x40_2000;
const SMS_ATTACKER_PC: u64 = 0x60_2000;
const SMS_ALIAS_OFFSET: u64 = 12;
const SMS_MIN_LINES: u64 = 16;

const DMP_DATA: u64 = 0x50_0000;
const DMP_POINTER: u64 = 0x4000_2040;
const DMP_BLIND: u64 = 0x5A5A_0000_0000_0000;
const DMP_PC: u64 = 0x40_3000;

const SMT_ATTACKER_PADDING: usize = 24;

fn stage(label: StageLabel, victim: bool) -> Action {
    Action::Stage(if victim {
        Stage::victim(label)
    } else {
        Stage::attacker(label)
    })
}

fn finish(mut m: Machine) -> Result<Machine, AttackError> {
    m.run(MAX_TICKS)?;
    Ok(m)
}

fn any_miss(m: &Machine) -> bool {
    m.probes()
        .iter()
        .flat_map(|p| &p.samples)
        .any(|s| s.state == LineState::Miss)
}

fn max_probe_latency(m: &Machine) -> u32 {
    m.probes()
        .iter()
        .flat_map(|p| &p.samples)
        .map(|s| s.latency)
        .max()
        .unwrap_or(0)
}

/// A permutation of `0..n` in which no two consecutive deltas are equal,
/// so a stride entry never gains enough confidence.
pub fn irregular_permutation(n: u64, rng: &mut Xorshift64Star) -> Vec<u64> {
    loop {
        let mut order: Vec<u64> = (0..n).collect();
        rng.shuffle(&mut order);
        let deltas: Vec<i64> = order
            .windows(2)
            .map(|w| w[1] as i64 - w[0] as i64)
            .collect();
        if deltas.windows(2).all(|d| d[0] != d[1]) {
            return order;
        }
    }
}

// Table walk: sequential for bit 1, irregular for bit 0. The last load is
// marked as the trigger since its prefetch lands after the table.
fn table_walk(secret: u64, line: u64, rng: &mut Xorshift64Star) -> Program {
    let order: Vec<u64> = if secret == 1 {
        (0..TABLE_LINES).collect()
    } else {
        irregular_permutation(TABLE_LINES, rng)
    };
    let mut prog = Vec::with_capacity(order.len() + 1);
    for (i, idx) in order.iter().enumerate() {
        if i + 1 == order.len() {
            prog.push(stage(StageLabel::S4Trigger, true));
        }
        prog.push(Action::Load {
            pc: TABLE_PC,
            addr: TABLE + idx * line,
        });
    }
    prog
}

fn protect(defended: bool, body: Program) -> Program {
    let mut prog = Vec::with_capacity(body.len() + 2);
    if defended {
        prog.push(Action::Prctl(true));
    }
    prog.extend(body);
    if defended {
        prog.push(Action::Prctl(false));
    }
    prog
}

/// Lookup-table walk observed through the line right after the table.
pub fn shin_trial(
    settings: &AttackSettings,
    defended: bool,
    secret: u64,
    rng: &mut Xorshift64Star,
    trial_seed: u64,
) -> Result<TrialOutcome, AttackError> {
    let mut m = settings.machine(Scenario::Shin, trial_seed)?;
    let line = settings.geometry.line_size;
    let after_table = TABLE + TABLE_LINES * line;
    let attacker = vec![
        stage(StageLabel::S1Prepare, false),
        Action::Compute(1),
        stage(StageLabel::S2Reset, false),
        Action::Flush(vec![after_table]),
        Action::Yield,
        stage(StageLabel::S5Extract, false),
        Action::Probe {
            label: "after_table".into(),
            addrs: vec![after_table],
        },
    ];
    let mut victim = vec![stage(StageLabel::S3Train, true)];
    victim.extend(protect(defended, table_walk(secret, line, rng)));
    m.add_task(CoreId(0), attacker)?;
    m.add_task(CoreId(0), victim)?;
    let m = finish(m)?;
    let sample = m.probes()[0].samples[0];
    let guess = u64::from(sample.state == LineState::Hit);
    let samples = vec![(format!("bit={secret}"), sample.latency)];
    Ok(TrialOutcome::from_machine(&m, secret, guess, samples))
}

/// Branch leak through a stride entry shared by colliding load addresses.
/// The attacker trains its entry to full confidence, the victim's taken
/// branch executes a colliding load that rewrites the stride, and the
/// attacker's next load only prefetches if the entry survived.
pub fn afterimage_v1_trial(
    settings: &AttackSettings,
    defended: bool,
    collide: bool,
    secret: u64,
    trial_seed: u64,
) -> Result<TrialOutcome, AttackError> {
    let scenario = if collide {
        Scenario::AfterImageV1
    } else {
        Scenario::AfterImageV1NoCollision
    };
    let mut m = settings.machine(scenario, trial_seed)?;
    let stride = 2 * settings.geometry.line_size;
    let target = AI_BASE + 5 * stride;
    let evset = build_eviction_set(&settings.geometry, target);
    let apc = if collide {
        AI_ATTACKER_PC
    } else {
        AI_ATTACKER_PC_OTHER
    };

    let mut attacker = vec![
        stage(StageLabel::S1Prepare, false),
        Action::Compute(1),
        stage(StageLabel::S2Reset, false),
        Action::Prime(evset.clone()),
        stage(StageLabel::S3Train, false),
    ];
    attacker.extend((0..4).map(|k| Action::Load {
        pc: apc,
        addr: AI_BASE + k * stride,
    }));
    attacker.extend([
        Action::Yield,
        stage(StageLabel::S4Trigger, false),
        Action::Load {
            pc: apc,
            addr: AI_BASE + 4 * stride,
        },
        stage(StageLabel::S5Extract, false),
        Action::Probe {
            label: "eviction_set".into(),
            addrs: evset,
        },
    ]);

    let branch = if secret == 1 {
        Action::Load {
            pc: AI_TAKEN_PC,
            addr: AI_TAKEN_ADDR,
        }
    } else {
        Action::Load {
            pc: AI_SKIPPED_PC,
            addr: AI_SKIPPED_ADDR,
        }
    };
    let mut victim = vec![stage(StageLabel::S3Train, true)];
    victim.extend(protect(defended, vec![branch]));

    m.add_task(CoreId(0), attacker)?;
    m.add_task(CoreId(0), victim)?;
    let m = finish(m)?;
    // An evicted line means the attacker's entry still predicted the target.
    let guess = u64::from(!any_miss(&m));
    let samples = vec![(format!("bit={secret}"), max_probe_latency(&m))];
    Ok(TrialOutcome::from_machine(&m, secret, guess, samples))
}

/// Line offsets the victim touches for a nibble: bit `i` selects line
/// `1 + 2i` (clear) or `2 + 2i` (set), so every nibble touches four lines.
pub fn sms_offsets(nibble: u64) -> [u64; 4] {
    std::array::from_fn(|i| 1 + 2 * i as u64 + ((nibble >> i) & 1))
}

/// Footprint transfer through the spatial pattern table: the victim's
/// secret-dependent region footprint is replayed into the attacker's region.
pub fn sms_trial(
    settings: &AttackSettings,
    defended: bool,
    aligned: bool,
    secret: u64,
    trial_seed: u64,
) -> Result<TrialOutcome, AttackError> {
    let scenario = if aligned {
        Scenario::Sms
    } else {
        Scenario::SmsAlias
    };
    let mut m = settings.machine(scenario, trial_seed)?;
    let line = settings.geometry.line_size;
    let region = settings
        .prefetcher
        .as_ref()
        .map_or(1024, |p| p.sms.region_size);
    if region / line < SMS_MIN_LINES {
        return Err(AttackError::Unsupported {
            scenario: scenario.name(),
            reason: "the spatial region must hold at least 16 lines",
        });
    }
    let probe_lines: Vec<u64> = (1..=8).map(|o| SMS_ATTACKER_REGION + o * line).collect();
    let trigger = if aligned { 0 } else { SMS_ALIAS_OFFSET };

    let attacker = vec![
        stage(StageLabel::S1Prepare, false),
        Action::Compute(1),
        stage(StageLabel::S2Reset, false),
        Action::Flush(probe_lines.clone()),
        Action::Yield,
        stage(StageLabel::S4Trigger, false),
        Action::Load {
            pc: SMS_ATTACKER_PC,
            addr: SMS_ATTACKER_REGION + trigger * line,
        },
        stage(StageLabel::S5Extract, false),
        Action::Probe {
            label: "replay".into(),
            addrs: probe_lines,
        },
    ];
    let offsets = sms_offsets(secret);
    let mut body = vec![Action::Load {
        pc: SMS_VICTIM_PC,
        addr: SMS_VICTIM_REGION,
    }];
    body.extend(offsets.iter().map(|o| Action::Load {
        pc: SMS_VICTIM_PC,
        addr: SMS_VICTIM_REGION + o * line,
    }));
    let mut victim = vec![stage(StageLabel::S3Train, true)];
    victim.extend(protect(defended, body));

    m.add_task(CoreId(0), attacker)?;
    m.add_task(CoreId(0), victim)?;
    let m = finish(m)?;
    let probe = &m.probes()[0].samples;
    let hit = |i: usize| probe[i].state == LineState::Hit;
    let guess = (0..4).fold(0u64, |acc, i| {
        let set = hit(2 * i + 1) && !hit(2 * i);
        acc | (u64::from(set) << i)
    });
    let samples = probe
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let class = if offsets.contains(&(i as u64 + 1)) {
                "in_pattern"
            } else {
                "out_of_pattern"
            };
            (class.to_string(), s.latency)
        })
        .collect();
    Ok(TrialOutcome::from_machine(&m, secret, guess, samples))
}

/// Pointer-shaped intermediate value dereferenced by the data-dependent
/// prefetcher. Both secret values execute the same loads and stores; only
/// the stored value differs.
pub fn dmp_trial(
    settings: &AttackSettings,
    defended: bool,
    secret: u64,
    trial_seed: u64,
) -> Result<TrialOutcome, AttackError> {
    let mut m = settings.machine(Scenario::Dmp, trial_seed)?;
    let evset = build_eviction_set(&settings.geometry, DMP_POINTER);
    let attacker = vec![
        stage(StageLabel::S1Prepare, false),
        Action::Compute(1),
        stage(StageLabel::S2Reset, false),
        Action::Prime(evset.clone()),
        Action::Yield,
        stage(StageLabel::S5Extract, false),
        Action::Probe {
            label: "eviction_set".into(),
            addrs: evset,
        },
    ];
    let value = if secret == 1 {
        DMP_POINTER
    } else {
        DMP_POINTER ^ DMP_BLIND
    };
    let body = vec![
        Action::Store {
            addr: DMP_DATA + 8,
            value,
        },
        stage(StageLabel::S4Trigger, true),
        Action::Load {
            pc: DMP_PC,
            addr: DMP_DATA,
        },
    ];
    let mut victim = vec![stage(StageLabel::S3Train, true)];
    victim.extend(protect(defended, body));

    m.add_task(CoreId(0), attacker)?;
    m.add_task(CoreId(0), victim)?;
    let m = finish(m)?;
    let guess = u64::from(any_miss(&m));
    let samples = vec![(format!("bit={secret}"), max_probe_latency(&m))];
    Ok(TrialOutcome::from_machine(&m, secret, guess, samples))
}

/// Victim walk on sibling 0, attacker on sibling 1 clearing its own flag
/// while the walk runs, then probing the line after the table.
pub fn smt_bypass_trial(
    settings: &AttackSettings,
    protect_walk: bool,
    secret: u64,
    rng: &mut Xorshift64Star,
    trial_seed: u64,
) -> Result<TrialOutcome, AttackError> {
    let scenario = if protect_walk {
        Scenario::SmtBypass
    } else {
        Scenario::SmtBypassBaseline
    };
    let mut m = settings.machine(scenario, trial_seed)?;
    let line = settings.geometry.line_size;
    let after_table = TABLE + TABLE_LINES * line;
    let siblings = m.topology().cores_in(crate::topology::DomainId(0)).to_vec();

    let mut attacker = vec![
        stage(StageLabel::S1Prepare, false),
        stage(StageLabel::S2Reset, false),
        Action::Flush(vec![after_table]),
        Action::Compute(1),
        Action::Compute(1),
        Action::Prctl(false),
    ];
    attacker.extend(std::iter::repeat_n(
        Action::Compute(1),
        SMT_ATTACKER_PADDING,
    ));
    attacker.extend([
        stage(StageLabel::S5Extract, false),
        Action::Probe {
            label: "after_table".into(),
            addrs: vec![after_table],
        },
    ]);
    let mut victim = vec![Action::Compute(1), stage(StageLabel::S3Train, true)];
    victim.extend(protect(protect_walk, table_walk(secret, line, rng)));

    m.add_task(siblings[0], victim)?;
    m.add_task(siblings[1], attacker)?;
    let m = finish(m)?;
    let sample = m.probes()[0].samples[0];
    let guess = u64::from(sample.state == LineState::Hit);
    let samples = vec![(format!("bit={secret}"), sample.latency)];
    Ok(TrialOutcome::from_machine(&m, secret, guess, samples))
}
