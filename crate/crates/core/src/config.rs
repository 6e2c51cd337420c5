//! Scenario configuration files.
//!
//! The format is INI-like: `key = value` lines grouped under `[section]`
//! headers, `;` or `#` comments. Recognised keys (all optional except
//! `scenario.name` and `scenario.seed`):
//!
//! ```text
//! [scenario]   name, defended, trials, seed
//! [topology]   physical_cores, smt_ways, domains (per_physical_core | global)
//! [cache]      sets, ways, line_size, latency_hit, latency_miss, noise
//! [prefetcher] family, stride_capacity, stride_threshold, stride_degree,
//!              sms_region_size, sms_capacity, dmp_history_depth,
//!              dmp_ranges (lo-hi[,lo-hi...]), clear_on_disable
//! [scheduler]  quantum
//! [output]     dir, report, histogram, probes, events, accesses, summary
//! ```
//!
//! Integers may be written in decimal or with a `0x` prefix. Without a
//! `[topology]` section the scenario picks the smallest machine it needs;
//! without `prefetcher.family` it uses its own family.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ini::Ini;
use thiserror::Error;

use crate::attack::{AttackError, AttackSettings, Scenario};
use crate::cache::{CacheGeometry, Latencies};
use crate::par::Execution;
use crate::prefetch::{
    AddrRange, DmpConfig, Prefetcher, PrefetcherConfig, PrefetcherFamily, SmsConfig, StrideConfig,
};
use crate::sched::DomainLaw;
use crate::topology::{DomainGranularity, Topology};

/// Environment variable that replaces `output.dir`.
pub const OUT_DIR_ENV: &str = "PREFENCE_OUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config at {0}")]
    Syntax(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key {section}.{key}")]
    UnknownKey { section: String, key: String },
    #[error("key {section}.{key} given more than once")]
    Duplicate { section: String, key: String },
    #[error("missing required key {section}.{key}")]
    Missing {
        section: &'static str,
        key: &'static str,
    },
    #[error("invalid value {value:?} for {section}.{key}: {reason}")]
    Invalid {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Scenario(#[from] AttackError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TopologySpec {
    pub physical_cores: usize,
    pub smt_ways: usize,
    pub domains: DomainGranularity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefetcherSpec {
    pub family: Option<PrefetcherFamily>,
    pub stride_capacity: usize,
    pub stride_threshold: u8,
    pub stride_degree: u32,
    pub sms_region_size: u64,
    pub sms_capacity: usize,
    pub dmp_history_depth: usize,
    pub dmp_ranges: Vec<AddrRange>,
    pub clear_on_disable: bool,
}

impl Default for PrefetcherSpec {
    fn default() -> Self {
        let stride = StrideConfig::default();
        let sms = SmsConfig::default();
        let dmp = DmpConfig::default();
        Self {
            family: None,
            stride_capacity: stride.capacity,
            stride_threshold: stride.confidence_threshold,
            stride_degree: stride.degree,
            sms_region_size: sms.region_size,
            sms_capacity: sms.capacity,
            dmp_history_depth: dmp.history_depth,
            dmp_ranges: dmp.valid_ranges,
            clear_on_disable: false,
        }
    }
}

impl PrefetcherSpec {
    pub fn to_config(&self, family: PrefetcherFamily) -> PrefetcherConfig {
        PrefetcherConfig {
            family,
            stride: StrideConfig {
                capacity: self.stride_capacity,
                confidence_threshold: self.stride_threshold,
                degree: self.stride_degree,
                ..StrideConfig::default()
            },
            sms: SmsConfig {
                region_size: self.sms_region_size,
                capacity: self.sms_capacity,
                ..SmsConfig::default()
            },
            dmp: DmpConfig {
                valid_ranges: self.dmp_ranges.clone(),
                history_depth: self.dmp_history_depth,
                ..DmpConfig::default()
            },
            clear_on_disable: self.clear_on_disable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputSpec {
    pub dir: String,
    pub report: String,
    pub histogram: String,
    pub probes: String,
    pub events: String,
    pub accesses: String,
    pub summary: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            report: "report.json".into(),
            histogram: "histogram.csv".into(),
            probes: "probes.csv".into(),
            events: "events.csv".into(),
            accesses: "accesses.csv".into(),
            summary: "summary.json".into(),
        }
    }
}

impl OutputSpec {
    /// Output directory, honouring the environment override.
    pub fn resolved_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => PathBuf::from(&self.dir),
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.resolved_dir().join(file)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: String,
    pub defended: bool,
    pub trials: usize,
    pub seed: u64,
    pub topology: Option<TopologySpec>,
    pub geometry: CacheGeometry,
    pub latencies: Latencies,
    /// Probability of the random-flush noise; 0 disables it.
    pub noise: f64,
    pub prefetcher: PrefetcherSpec,
    pub quantum: u32,
    pub output: OutputSpec,
}

impl ScenarioConfig {
    pub fn new(scenario: &str, seed: u64) -> Self {
        Self {
            scenario: scenario.to_string(),
            defended: false,
            trials: 1000,
            seed,
            topology: None,
            geometry: CacheGeometry::default(),
            latencies: Latencies::default(),
            noise: 0.0,
            prefetcher: PrefetcherSpec::default(),
            quantum: AttackSettings::default().quantum,
            output: OutputSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                ConfigError::NotFound(path.to_path_buf())
            } else {
                ConfigError::Io {
                    path: path.to_path_buf(),
                    source: e,
                }
            }
        })?;
        text.parse()
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        Ok(Scenario::parse(&self.scenario)?)
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let scenario = self.scenario()?;
        let bad = |section: &str, key: &str, value: String, reason: String| ConfigError::Invalid {
            section: section.into(),
            key: key.into(),
            value,
            reason,
        };
        if self.trials == 0 {
            return Err(bad(
                "scenario",
                "trials",
                "0".into(),
                "at least one trial".into(),
            ));
        }
        if let Some(t) = self.topology {
            Topology::build(t.physical_cores, t.smt_ways, t.domains).map_err(|e| {
                bad(
                    "topology",
                    "physical_cores",
                    t.physical_cores.to_string(),
                    e.to_string(),
                )
            })?;
        }
        self.geometry.validate().map_err(|e| {
            bad(
                "cache",
                "line_size",
                self.geometry.line_size.to_string(),
                e.to_string(),
            )
        })?;
        self.latencies.validate().map_err(|e| {
            bad(
                "cache",
                "latency_hit",
                self.latencies.hit.to_string(),
                e.to_string(),
            )
        })?;
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(bad(
                "cache",
                "noise",
                self.noise.to_string(),
                "probability in [0, 1]".into(),
            ));
        }
        if self.quantum == 0 {
            return Err(bad(
                "scheduler",
                "quantum",
                "0".into(),
                "at least one tick".into(),
            ));
        }
        let family = self.prefetcher.family.unwrap_or(scenario.family());
        if family != PrefetcherFamily::Xpt {
            Prefetcher::new(&self.prefetcher.to_config(family)).map_err(|e| {
                bad(
                    "prefetcher",
                    "family",
                    family.as_str().into(),
                    e.to_string(),
                )
            })?;
        }
        self.settings(Execution::Sequential)?.check(scenario)?;
        Ok(())
    }

    pub fn settings(&self, execution: Execution) -> Result<AttackSettings, ConfigError> {
        let scenario = self.scenario()?;
        let topology = match self.topology {
            Some(t) => Some(
                Topology::build(t.physical_cores, t.smt_ways, t.domains).map_err(|e| {
                    ConfigError::Invalid {
                        section: "topology".into(),
                        key: "physical_cores".into(),
                        value: t.physical_cores.to_string(),
                        reason: e.to_string(),
                    }
                })?,
            ),
            None => None,
        };
        let family = self.prefetcher.family.unwrap_or(scenario.family());
        Ok(AttackSettings {
            geometry: self.geometry,
            latencies: self.latencies,
            prefetcher: Some(self.prefetcher.to_config(family)),
            topology,
            quantum: self.quantum,
            noise: (self.noise > 0.0).then_some(self.noise),
            execution,
            policy: Arc::new(DomainLaw),
            verify_invariants: true,
        })
    }

    /// Serialises to the text format; `parse` of the result gives back an
    /// equal value.
    pub fn to_text(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("scenario"))
            .set("name", self.scenario.as_str())
            .set("defended", self.defended.to_string())
            .set("trials", self.trials.to_string())
            .set("seed", self.seed.to_string());
        if let Some(t) = self.topology {
            ini.with_section(Some("topology"))
                .set("physical_cores", t.physical_cores.to_string())
                .set("smt_ways", t.smt_ways.to_string())
                .set("domains", t.domains.as_str());
        }
        ini.with_section(Some("cache"))
            .set("sets", self.geometry.sets.to_string())
            .set("ways", self.geometry.ways.to_string())
            .set("line_size", self.geometry.line_size.to_string())
            .set("latency_hit", self.latencies.hit.to_string())
            .set("latency_miss", self.latencies.miss.to_string())
            .set("noise", self.noise.to_string());
        let p = &self.prefetcher;
        let mut ranges = String::new();
        for (i, r) in p.dmp_ranges.iter().enumerate() {
            if i > 0 {
                ranges.push(',');
            }
            let _ = write!(ranges, "{:#x}-{:#x}", r.lo, r.hi);
        }
        {
            let mut s = ini.with_section(Some("prefetcher"));
            if let Some(f) = p.family {
                s.set("family", f.as_str());
            }
            s.set("stride_capacity", p.stride_capacity.to_string())
                .set("stride_threshold", p.stride_threshold.to_string())
                .set("stride_degree", p.stride_degree.to_string())
                .set("sms_region_size", p.sms_region_size.to_string())
                .set("sms_capacity", p.sms_capacity.to_string())
                .set("dmp_history_depth", p.dmp_history_depth.to_string())
                .set("dmp_ranges", ranges)
                .set("clear_on_disable", p.clear_on_disable.to_string());
        }
        ini.with_section(Some("scheduler"))
            .set("quantum", self.quantum.to_string());
        let o = &self.output;
        ini.with_section(Some("output"))
            .set("dir", o.dir.as_str())
            .set("report", o.report.as_str())
            .set("histogram", o.histogram.as_str())
            .set("probes", o.probes.as_str())
            .set("events", o.events.as_str())
            .set("accesses", o.accesses.as_str())
            .set("summary", o.summary.as_str());
        let mut out = Vec::new();
        ini.write_to(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("utf-8 input")
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("scenario", &["name", "defended", "trials", "seed"]),
    ("topology", &["physical_cores", "smt_ways", "domains"]),
    (
        "cache",
        &[
            "sets",
            "ways",
            "line_size",
            "latency_hit",
            "latency_miss",
            "noise",
        ],
    ),
    (
        "prefetcher",
        &[
            "family",
            "stride_capacity",
            "stride_threshold",
            "stride_degree",
            "sms_region_size",
            "sms_capacity",
            "dmp_history_depth",
            "dmp_ranges",
            "clear_on_disable",
        ],
    ),
    ("scheduler", &["quantum"]),
    (
        "output",
        &[
            "dir",
            "report",
            "histogram",
            "probes",
            "events",
            "accesses",
            "summary",
        ],
    ),
];

struct Entries(BTreeMap<(String, String), String>);

impl Entries {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.0
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    fn has_section(&self, section: &str) -> bool {
        self.0.keys().any(|(s, _)| s == section)
    }

    fn invalid(section: &str, key: &str, value: &str, reason: impl ToString) -> ConfigError {
        ConfigError::Invalid {
            section: section.into(),
            key: key.into(),
            value: value.into(),
            reason: reason.to_string(),
        }
    }

    fn get<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| Self::invalid(section, key, v, e)),
        }
    }

    fn int(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => parse_int(v).map_err(|e| Self::invalid(section, key, v, e)),
        }
    }

    fn small<T>(&self, section: &str, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: Copy + Into<u64> + TryFrom<u64>,
    {
        let v = self.int(section, key, default.into())?;
        T::try_from(v).map_err(|_| Self::invalid(section, key, &v.to_string(), "out of range"))
    }

    fn count(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        let v = self.int(section, key, default as u64)?;
        usize::try_from(v).map_err(|_| Self::invalid(section, key, &v.to_string(), "out of range"))
    }
}

fn parse_int(v: &str) -> Result<u64, std::num::ParseIntError> {
    match v.strip_prefix("0x").or_else(|| v.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => v.parse(),
    }
}

fn parse_ranges(v: &str) -> Result<Vec<AddrRange>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|part| {
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| format!("range {part:?} is not lo-hi"))?;
            let lo = parse_int(lo.trim()).map_err(|e| e.to_string())?;
            let hi = parse_int(hi.trim()).map_err(|e| e.to_string())?;
            Ok(AddrRange { lo, hi })
        })
        .collect()
}

impl FromStr for ScenarioConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let ini =
            Ini::load_from_str_noescape(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut map = BTreeMap::new();
        for (section, props) in &ini {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(ConfigError::UnknownKey {
                        section: String::new(),
                        key: key.to_string(),
                    });
                }
                continue;
            };
            let Some((_, allowed)) = KEYS.iter().find(|(s, _)| *s == section) else {
                return Err(ConfigError::UnknownSection(section.to_string()));
            };
            for (key, value) in props.iter() {
                if !allowed.contains(&key) {
                    return Err(ConfigError::UnknownKey {
                        section: section.into(),
                        key: key.into(),
                    });
                }
                let k = (section.to_string(), key.to_string());
                if map.insert(k, value.trim().to_string()).is_some() {
                    return Err(ConfigError::Duplicate {
                        section: section.into(),
                        key: key.into(),
                    });
                }
            }
        }
        let e = Entries(map);

        let scenario = e
            .raw("scenario", "name")
            .ok_or(ConfigError::Missing {
                section: "scenario",
                key: "name",
            })?
            .to_string();
        if e.raw("scenario", "seed").is_none() {
            return Err(ConfigError::Missing {
                section: "scenario",
                key: "seed",
            });
        }
        let mut cfg = ScenarioConfig::new(&scenario, e.int("scenario", "seed", 0)?);
        cfg.defended = e.get("scenario", "defended", false)?;
        cfg.trials = e.count("scenario", "trials", cfg.trials)?;

        if e.has_section("topology") {
            let domains = match e.raw("topology", "domains") {
                None => DomainGranularity::default(),
                Some(v) => DomainGranularity::parse(v).ok_or_else(|| {
                    Entries::invalid("topology", "domains", v, "per_physical_core or global")
                })?,
            };
            cfg.topology = Some(TopologySpec {
                physical_cores: e.count("topology", "physical_cores", 1)?,
                smt_ways: e.count("topology", "smt_ways", 1)?,
                domains,
            });
        }

        let g = CacheGeometry::default();
        cfg.geometry = CacheGeometry {
            sets: e.count("cache", "sets", g.sets)?,
            ways: e.count("cache", "ways", g.ways)?,
            line_size: e.int("cache", "line_size", g.line_size)?,
        };
        let l = Latencies::default();
        cfg.latencies = Latencies {
            hit: e.small("cache", "latency_hit", l.hit)?,
            miss: e.small("cache", "latency_miss", l.miss)?,
        };
        cfg.noise = e.get("cache", "noise", 0.0)?;

        let d = PrefetcherSpec::default();
        let family = match e.raw("prefetcher", "family") {
            None => None,
            Some(v) => Some(PrefetcherFamily::parse(v).ok_or_else(|| {
                Entries::invalid("prefetcher", "family", v, "ip_stride, sms, dmp or xpt")
            })?),
        };
        let dmp_ranges = match e.raw("prefetcher", "dmp_ranges") {
            None => d.dmp_ranges.clone(),
            Some(v) => {
                parse_ranges(v).map_err(|r| Entries::invalid("prefetcher", "dmp_ranges", v, r))?
            }
        };
        cfg.prefetcher = PrefetcherSpec {
            family,
            stride_capacity: e.count("prefetcher", "stride_capacity", d.stride_capacity)?,
            stride_threshold: e.small("prefetcher", "stride_threshold", d.stride_threshold)?,
            stride_degree: e.small("prefetcher", "stride_degree", d.stride_degree)?,
            sms_region_size: e.int("prefetcher", "sms_region_size", d.sms_region_size)?,
            sms_capacity: e.count("prefetcher", "sms_capacity", d.sms_capacity)?,
            dmp_history_depth: e.count("prefetcher", "dmp_history_depth", d.dmp_history_depth)?,
            dmp_ranges,
            clear_on_disable: e.get("prefetcher", "clear_on_disable", false)?,
        };
        cfg.quantum = e.small("scheduler", "quantum", cfg.quantum)?;

        let o = OutputSpec::default();
        let text =
            |key: &str, default: String| e.raw("output", key).map_or(default, str::to_string);
        cfg.output = OutputSpec {
            dir: text("dir", o.dir),
            report: text("report", o.report),
            histogram: text("histogram", o.histogram),
            probes: text("probes", o.probes),
            events: text("events", o.events),
            accesses: text("accesses", o.accesses),
            summary: text("summary", o.summary),
        };
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
; leakage run
[scenario]
name = shin
defended = true
trials = 200
seed = 0x2a

[topology]
physical_cores = 2
smt_ways = 2
domains = global

[prefetcher]
family = ip_stride
stride_threshold = 3
dmp_ranges = 0x1000-0x2000, 0x3000-0x4000
";

    #[test]
    fn parses_sample() {
        let c: ScenarioConfig = SAMPLE.parse().unwrap();
        assert_eq!(c.scenario, "shin");
        assert!(c.defended);
        assert_eq!((c.trials, c.seed), (200, 42));
        assert_eq!(
            c.topology,
            Some(TopologySpec {
                physical_cores: 2,
                smt_ways: 2,
                domains: DomainGranularity::Global
            })
        );
        assert_eq!(c.prefetcher.stride_threshold, 3);
        assert_eq!(c.prefetcher.dmp_ranges.len(), 2);
        assert_eq!(c.geometry, CacheGeometry::default());
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let c: ScenarioConfig = SAMPLE.parse().unwrap();
        let again: ScenarioConfig = c.to_text().parse().unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn seed_is_mandatory() {
        let err = "[scenario]\nname = shin\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Missing { key: "seed", .. }));
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        let err = "[scenario]\nname=shin\nseed=1\ncolour=red\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
        let err = "[scenario]\nname=shin\nseed=1\n[gpu]\nx=1\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection(_)));
        let err = "[scenario]\nname=shin\nseed=1\nseed=2\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { .. }));
    }

    #[test]
    fn bad_values_rejected() {
        let err = "[scenario]\nname=shin\nseed=abc\n"
            .parse::<ScenarioConfig>()
            .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
        let c: ScenarioConfig = "[scenario]\nname=nope\nseed=1\n".parse().unwrap();
        assert!(matches!(c.validate(), Err(ConfigError::Scenario(_))));
        let c: ScenarioConfig = "[scenario]\nname=sms\nseed=1\n[prefetcher]\nfamily=dmp\n"
            .parse()
            .unwrap();
        assert!(c.validate().is_err());
        let c: ScenarioConfig =
            "[scenario]\nname=smt_bypass\nseed=1\n[topology]\nphysical_cores=2\n"
                .parse()
                .unwrap();
        assert!(c.validate().is_err());
    }
}
