//! Behavioral models of the exploited prefetcher families.
//!
//! Every model has an `enabled` bit. While it is clear, `observe` returns no
//! requests and leaves the model's state bit-identical; toggling the bit
//! never touches the tables unless `clear_on_disable` is configured.

mod dmp;
mod sms;
mod stride;

pub use dmp::{AddrRange, DmpConfig, DmpPrefetcher};
pub use sms::{SmsConfig, SmsEntry, SmsPrefetcher, SmsTraining};
pub use stride::{StrideConfig, StrideEntry, StridePrefetcher, MAX_CONFIDENCE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sched::TaskId;
use crate::topology::CoreId;

/// Size of a machine word scanned by the data-dependent prefetcher.
pub const WORD_SIZE: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetcherFamily {
    IpStride,
    Sms,
    Dmp,
    /// LLC-attached miss-counter prefetcher. Catalog only; never simulated.
    Xpt,
}

impl PrefetcherFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            PrefetcherFamily::IpStride => "ip_stride",
            PrefetcherFamily::Sms => "sms",
            PrefetcherFamily::Dmp => "dmp",
            PrefetcherFamily::Xpt => "xpt",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ip_stride" | "stride" => Some(PrefetcherFamily::IpStride),
            "sms" => Some(PrefetcherFamily::Sms),
            "dmp" => Some(PrefetcherFamily::Dmp),
            "xpt" => Some(PrefetcherFamily::Xpt),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemoryAccess {
    pub pc: u64,
    pub vaddr: u64,
    /// Loaded word, when the program declared the memory contents.
    pub value: Option<u64>,
    pub core: CoreId,
    pub task: TaskId,
}

impl MemoryAccess {
    pub fn new(pc: u64, vaddr: u64) -> Self {
        Self {
            pc,
            vaddr,
            value: None,
            core: CoreId(0),
            task: TaskId(0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefetchCause {
    Stride,
    SmsReplay,
    DmpDeref,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrefetchRequest {
    pub target: u64,
    pub cause: PrefetchCause,
    pub origin_task: TaskId,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrefetcherConfigError {
    #[error("the {0} prefetcher has no executable model")]
    NotSimulated(&'static str),
    #[error("stride table capacity must be at least 1")]
    StrideCapacity,
    #[error("stride confidence threshold {0} is outside 1..=3")]
    StrideThreshold(u8),
    #[error("SMS region size {region} must be a power-of-two multiple of the line size with at most 64 lines")]
    SmsRegion { region: u64 },
    #[error("SMS table capacity must be at least 1")]
    SmsCapacity,
    #[error("DMP range [{lo:#x}, {hi:#x}) is empty or overlaps another range")]
    DmpRange { lo: u64, hi: u64 },
    #[error("DMP history depth must be at least 1")]
    DmpHistory,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefetcherConfig {
    pub family: PrefetcherFamily,
    pub stride: StrideConfig,
    pub sms: SmsConfig,
    pub dmp: DmpConfig,
    /// Wipe the tables whenever the prefetcher is disabled.
    pub clear_on_disable: bool,
}

impl PrefetcherConfig {
    pub fn for_family(family: PrefetcherFamily) -> Self {
        Self {
            family,
            stride: StrideConfig::default(),
            sms: SmsConfig::default(),
            dmp: DmpConfig::default(),
            clear_on_disable: false,
        }
    }

    /// Propagates the cache line size to every model.
    pub fn with_line_size(mut self, line_size: u64) -> Self {
        self.stride.line_size = line_size;
        self.sms.line_size = line_size;
        self.dmp.line_size = line_size;
        self
    }
}

impl Default for PrefetcherConfig {
    fn default() -> Self {
        Self::for_family(PrefetcherFamily::IpStride)
    }
}

/// One prefetcher instance, owned by a sharing domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Prefetcher {
    Stride(StridePrefetcher),
    Sms(SmsPrefetcher),
    Dmp(DmpPrefetcher),
}

impl Prefetcher {
    pub fn new(config: &PrefetcherConfig) -> Result<Self, PrefetcherConfigError> {
        let model = match config.family {
            PrefetcherFamily::IpStride => Prefetcher::Stride(StridePrefetcher::new(config.stride)?),
            PrefetcherFamily::Sms => Prefetcher::Sms(SmsPrefetcher::new(config.sms)?),
            PrefetcherFamily::Dmp => Prefetcher::Dmp(DmpPrefetcher::new(config.dmp.clone())?),
            PrefetcherFamily::Xpt => return Err(PrefetcherConfigError::NotSimulated("xpt")),
        };
        Ok(model.with_clear_on_disable(config.clear_on_disable))
    }

    fn with_clear_on_disable(mut self, on: bool) -> Self {
        match &mut self {
            Prefetcher::Stride(p) => p.clear_on_disable = on,
            Prefetcher::Sms(p) => p.clear_on_disable = on,
            Prefetcher::Dmp(p) => p.clear_on_disable = on,
        }
        self
    }

    pub fn family(&self) -> PrefetcherFamily {
        match self {
            Prefetcher::Stride(_) => PrefetcherFamily::IpStride,
            Prefetcher::Sms(_) => PrefetcherFamily::Sms,
            Prefetcher::Dmp(_) => PrefetcherFamily::Dmp,
        }
    }

    /// Feeds one demand access. `line_contents` holds the words of the
    /// accessed line; only the data-dependent model looks at it.
    pub fn observe(&mut self, acc: &MemoryAccess, line_contents: &[u64]) -> Vec<PrefetchRequest> {
        match self {
            Prefetcher::Stride(p) => p.observe(acc),
            Prefetcher::Sms(p) => p.observe(acc),
            Prefetcher::Dmp(p) => p.observe(acc, line_contents),
        }
    }

    pub fn set_enabled(&mut self, on: bool) {
        match self {
            Prefetcher::Stride(p) => p.set_enabled(on),
            Prefetcher::Sms(p) => p.set_enabled(on),
            Prefetcher::Dmp(p) => p.set_enabled(on),
        }
    }

    pub fn is_enabled(&self) -> bool {
        match self {
            Prefetcher::Stride(p) => p.is_enabled(),
            Prefetcher::Sms(p) => p.is_enabled(),
            Prefetcher::Dmp(p) => p.is_enabled(),
        }
    }

    pub fn reset_state(&mut self) {
        match self {
            Prefetcher::Stride(p) => p.reset_state(),
            Prefetcher::Sms(p) => p.reset_state(),
            Prefetcher::Dmp(p) => p.reset_state(),
        }
    }
}
