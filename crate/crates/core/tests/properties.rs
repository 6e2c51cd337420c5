use std::collections::{BTreeMap, VecDeque};

use proptest::prelude::*;

use prefence_sim::attack::{run_scenario, AttackSettings, Scenario};
use prefence_sim::cache::{Cache, CacheGeometry, Latencies};
use prefence_sim::config::{OutputSpec, PrefetcherSpec, ScenarioConfig, TopologySpec};
use prefence_sim::par::Execution;
use prefence_sim::prefetch::{
    AddrRange, MemoryAccess, PrefetcherFamily, StrideConfig, StridePrefetcher,
};
use prefence_sim::report;
use prefence_sim::sched::{Scheduler, TaskId};
use prefence_sim::stats;
use prefence_sim::topology::{CoreId, DomainGranularity, Topology};

/// Single-entry reference of the stride automaton with degree 1.
struct StrideOracle {
    last: Option<u64>,
    stride: Option<i64>,
    confidence: u8,
}

impl StrideOracle {
    fn step(&mut self, addr: u64) -> Option<u64> {
        let last = self.last.replace(addr)?;
        let delta = addr.wrapping_sub(last) as i64;
        match self.stride {
            None => self.confidence = 1,
            Some(s) if s == delta => self.confidence = (self.confidence + 1).min(3),
            Some(_) => self.confidence = self.confidence.saturating_sub(1),
        }
        self.stride = Some(delta);
        if self.confidence < 2 || delta == 0 {
            return None;
        }
        addr.checked_add_signed(delta)
            .filter(|t| t / 64 != addr / 64)
    }
}

/// Per-set LRU list of line numbers, youngest first.
fn lru_oracle(geometry: CacheGeometry, addrs: &[u64]) -> Vec<bool> {
    let mut sets: Vec<VecDeque<u64>> = vec![VecDeque::new(); geometry.sets];
    addrs
        .iter()
        .map(|&a| {
            let line = a / geometry.line_size;
            let set = &mut sets[(line % geometry.sets as u64) as usize];
            let hit = match set.iter().position(|&l| l == line) {
                Some(i) => {
                    set.remove(i);
                    true
                }
                None => {
                    if set.len() == geometry.ways {
                        set.pop_back();
                    }
                    false
                }
            };
            set.push_front(line);
            hit
        })
        .collect()
}

fn scenario_config() -> impl Strategy<Value = ScenarioConfig> {
    let names: Vec<&'static str> = Scenario::ALL.iter().map(|s| s.name()).collect();
    let file = "[a-z][a-z0-9_.]{0,10}";
    (
        (
            prop::sample::select(names),
            any::<bool>(),
            1usize..5000,
            any::<u64>(),
        ),
        prop::option::of((1usize..4, 1usize..4, any::<bool>())),
        (
            1usize..128,
            1usize..16,
            4u32..9,
            1u32..200,
            200u32..1000,
            0.0f64..1.0,
        ),
        (
            prop::option::of(prop::sample::select(vec![
                PrefetcherFamily::IpStride,
                PrefetcherFamily::Sms,
                PrefetcherFamily::Dmp,
            ])),
            (1usize..64, 1u8..4, 1u32..4),
            (6u32..13, 1usize..64, 1usize..4),
            prop::collection::vec((0u64..1 << 40, 1u64..1 << 20), 0..3),
            any::<bool>(),
        ),
        1u32..500,
        prop::collection::vec(file, 7),
    )
        .prop_map(|(s, topo, c, p, quantum, files)| {
            let mut cfg = ScenarioConfig::new(s.0, s.3);
            cfg.defended = s.1;
            cfg.trials = s.2;
            cfg.topology = topo.map(|(pc, smt, global)| TopologySpec {
                physical_cores: pc,
                smt_ways: smt,
                domains: if global {
                    DomainGranularity::Global
                } else {
                    DomainGranularity::PerPhysicalCore
                },
            });
            cfg.geometry = CacheGeometry {
                sets: c.0,
                ways: c.1,
                line_size: 1 << c.2,
            };
            cfg.latencies = Latencies {
                hit: c.3,
                miss: c.4,
            };
            cfg.noise = c.5;
            cfg.prefetcher = PrefetcherSpec {
                family: p.0,
                stride_capacity: p.1 .0,
                stride_threshold: p.1 .1,
                stride_degree: p.1 .2,
                sms_region_size: 1 << p.2 .0,
                sms_capacity: p.2 .1,
                dmp_history_depth: p.2 .2,
                dmp_ranges: p
                    .3
                    .iter()
                    .map(|&(lo, len)| AddrRange { lo, hi: lo + len })
                    .collect(),
                clear_on_disable: p.4,
            };
            cfg.quantum = quantum;
            cfg.output = OutputSpec {
                dir: files[0].clone(),
                report: files[1].clone(),
                histogram: files[2].clone(),
                probes: files[3].clone(),
                events: files[4].clone(),
                accesses: files[5].clone(),
                summary: files[6].clone(),
            };
            cfg
        })
}

proptest! {
    #[test]
    fn stride_matches_reference(deltas in prop::collection::vec(
        prop_oneof![Just(64i64), Just(128), Just(-64), -4096i64..4096], 1..40)) {
        let mut p = StridePrefetcher::new(StrideConfig::default()).unwrap();
        let mut oracle = StrideOracle { last: None, stride: None, confidence: 0 };
        let mut addr: u64 = 1 << 30;
        for d in deltas {
            addr = addr.wrapping_add_signed(d);
            let got: Vec<u64> = p.observe(&MemoryAccess::new(0x4242, addr)).iter().map(|r| r.target).collect();
            prop_assert_eq!(got, oracle.step(addr).into_iter().collect::<Vec<_>>());
            let e = p.entry(0x4242).unwrap();
            prop_assert!(e.confidence <= 3);
            prop_assert_eq!(e.confidence, oracle.confidence);
        }
    }

    #[test]
    fn cache_is_lru(addrs in prop::collection::vec(0u64..1 << 14, 1..300)) {
        let geometry = CacheGeometry { sets: 4, ways: 2, line_size: 64 };
        let mut cache = Cache::new(geometry, Latencies::default()).unwrap();
        let expected = lru_oracle(geometry, &addrs);
        for (a, hit) in addrs.iter().zip(expected) {
            let lat = cache.access(*a);
            prop_assert_eq!(lat, if hit { 96 } else { 340 });
            prop_assert!(cache.occupancy() <= geometry.sets * geometry.ways);
        }
    }

    #[test]
    fn disabled_stride_never_changes(addrs in prop::collection::vec((0u64..256, 0u64..1 << 20), 1..100)) {
        let mut p = StridePrefetcher::new(StrideConfig::default()).unwrap();
        for (pc, a) in addrs.iter().take(10) {
            p.observe(&MemoryAccess::new(*pc, *a));
        }
        p.set_enabled(false);
        let before = p.clone();
        for (pc, a) in &addrs {
            prop_assert!(p.observe(&MemoryAccess::new(*pc, *a)).is_empty());
        }
        prop_assert_eq!(p, before);
    }

    #[test]
    fn scheduler_keeps_law_and_isolation(
        smt in 1usize..4,
        global in any::<bool>(),
        placement in prop::collection::vec(0usize..8, 1..6),
        ops in prop::collection::vec((0u8..6, 0usize..8, 0usize..8, any::<bool>()), 0..120),
    ) {
        let gran = if global { DomainGranularity::Global } else { DomainGranularity::PerPhysicalCore };
        let topo = Topology::build(2, smt, gran).unwrap();
        let n = topo.logical_core_count();
        let mut s = Scheduler::new(topo, 2).unwrap();
        for c in &placement {
            s.create_task(CoreId(c % n)).unwrap();
        }
        for (op, a, b, flag) in ops {
            let core = CoreId(a % n);
            let tid = TaskId(b % s.tasks().len());
            let flags: Vec<bool> = s.tasks().iter().map(|t| t.prefetch_disable).collect();
            let acted = match op {
                0 => s.prctl_set(tid, flag).is_ok().then_some(tid),
                1 => { s.rotate(core); None }
                2 => { s.exit_current(core); None }
                3 => { let _ = s.migrate(tid, core); None }
                4 => { if s.charge_tick(core) { s.rotate(core); } None }
                _ => s.current(core).and_then(|t| s.spawn(t).ok()).map(|_| TaskId(usize::MAX)),
            };
            prop_assert!(s.check_invariants().is_ok());
            for d in s.topology().domains() {
                prop_assert_eq!(s.domain_enabled(d), s.enablement_law(d));
            }
            for (i, was) in flags.iter().enumerate() {
                if acted != Some(TaskId(i)) {
                    prop_assert_eq!(s.tasks()[i].prefetch_disable, *was);
                }
            }
        }
        prop_assert_eq!(s.toggles().len() as u64, s.toggle_counter());
    }

    #[test]
    fn spawned_tasks_inherit_flag(flag in any::<bool>()) {
        let mut s = Scheduler::new(Topology::single_core(), 1).unwrap();
        let parent = s.create_task_with(CoreId(0), flag, false).unwrap();
        s.rotate(CoreId(0));
        let child = s.spawn(parent).unwrap();
        prop_assert_eq!(s.prctl_query(child).unwrap(), flag);
    }

    #[test]
    fn config_round_trips(cfg in scenario_config()) {
        let text = cfg.to_text();
        let back: ScenarioConfig = text.parse().unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn chance_interval_brackets_mean(n in 1u64..3000, p in 0.01f64..0.99) {
        let (lo, hi) = stats::acceptance_counts(n, p, stats::ALPHA);
        prop_assert!(lo <= hi && hi <= n);
        let mean = n as f64 * p;
        prop_assert!(lo as f64 <= mean.ceil() && mean.floor() <= hi as f64);
    }

    #[test]
    fn canonical_json_is_sorted_and_stable(map in prop::collection::btree_map("[a-z]{1,6}", -1e6f64..1e6, 0..10)) {
        let text = report::to_canonical_json(&map).unwrap();
        prop_assert_eq!(&text, &report::to_canonical_json(&map).unwrap());
        let back: BTreeMap<String, f64> = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.len(), map.len());
        for (k, v) in &map {
            prop_assert!((back[k] - v).abs() <= 5e-7 * (1.0 + v.abs()));
        }
        let keys: Vec<&str> = text.lines().filter_map(|l| l.trim().split('"').nth(1)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        prop_assert_eq!(keys, sorted);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn parallel_and_sequential_reports_agree(seed in any::<u64>(), pick in 0usize..8, defended in any::<bool>()) {
        let scenario = Scenario::ALL[pick];
        let seq = AttackSettings::default().with_execution(Execution::Sequential);
        let par = AttackSettings::default().with_execution(Execution::Parallel);
        let a = run_scenario(scenario, defended, 16, seed, &seq).unwrap();
        let b = run_scenario(scenario, defended, 16, seed, &par).unwrap();
        prop_assert_eq!(report::to_canonical_json(&a).unwrap(), report::to_canonical_json(&b).unwrap());
        prop_assert_eq!(a, b);
    }
}
