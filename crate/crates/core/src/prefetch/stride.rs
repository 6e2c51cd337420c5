//! Instruction-pointer indexed stride prefetcher.
//!
//! Entries are tagged with the low 8 bits of the load's instruction address,
//! so loads from different programs whose addresses agree in those bits share
//! an entry. Per entry the model tracks the last address, the last stride and
//! a 2-bit saturating confidence counter:
//!
//! * tag miss: allocate (evicting the least recently used entry when full)
//!   with no stride and confidence 0;
//! * first access after allocation: the observed delta becomes the stride
//!   and confidence becomes 1;
//! * delta equal to the stored stride: confidence increments (max 3);
//! * any other delta: the stride is replaced and confidence decrements
//!   (min 0).
//!
//! After the update, an entry whose confidence is at least the threshold
//! requests `vaddr + k * stride` for `k in 1..=degree`.

use serde::{Deserialize, Serialize};

use super::{MemoryAccess, PrefetchCause, PrefetchRequest, PrefetcherConfigError};

pub const MAX_CONFIDENCE: u8 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StrideConfig {
    pub capacity: usize,
    pub confidence_threshold: u8,
    pub degree: u32,
    pub line_size: u64,
}

impl Default for StrideConfig {
    fn default() -> Self {
        Self {
            capacity: 16,
            confidence_threshold: 2,
            degree: 1,
            line_size: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StrideEntry {
    pub ip_tag: u8,
    pub last_addr: u64,
    pub stride: Option<i64>,
    pub confidence: u8,
    last_use: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StridePrefetcher {
    config: StrideConfig,
    entries: Vec<StrideEntry>,
    clock: u64,
    enabled: bool,
    pub(super) clear_on_disable: bool,
}

pub fn ip_tag(pc: u64) -> u8 {
    (pc & 0xFF) as u8
}

impl StridePrefetcher {
    pub fn new(config: StrideConfig) -> Result<Self, PrefetcherConfigError> {
        if config.capacity == 0 {
            return Err(PrefetcherConfigError::StrideCapacity);
        }
        if config.confidence_threshold == 0 || config.confidence_threshold > MAX_CONFIDENCE {
            return Err(PrefetcherConfigError::StrideThreshold(
                config.confidence_threshold,
            ));
        }
        Ok(Self {
            config,
            entries: Vec::with_capacity(config.capacity),
            clock: 0,
            enabled: true,
            clear_on_disable: false,
        })
    }

    pub fn config(&self) -> &StrideConfig {
        &self.config
    }

    pub fn entries(&self) -> &[StrideEntry] {
        &self.entries
    }

    pub fn entry(&self, pc: u64) -> Option<&StrideEntry> {
        let tag = ip_tag(pc);
        self.entries.iter().find(|e| e.ip_tag == tag)
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, on: bool) {
        if !on && self.clear_on_disable {
            self.reset_state();
        }
        self.enabled = on;
    }

    pub fn reset_state(&mut self) {
        self.entries.clear();
        self.clock = 0;
    }

    pub fn observe(&mut self, acc: &MemoryAccess) -> Vec<PrefetchRequest> {
        if !self.enabled {
            return Vec::new();
        }
        self.clock += 1;
        let tag = ip_tag(acc.pc);
        let Some(idx) = self.entries.iter().position(|e| e.ip_tag == tag) else {
            self.allocate(tag, acc.vaddr);
            return Vec::new();
        };

        let clock = self.clock;
        let entry = &mut self.entries[idx];
        entry.last_use = clock;
        let delta = acc.vaddr.wrapping_sub(entry.last_addr) as i64;
        match entry.stride {
            None => {
                entry.stride = Some(delta);
                entry.confidence = 1;
            }
            Some(s) if s == delta => {
                entry.confidence = (entry.confidence + 1).min(MAX_CONFIDENCE);
            }
            Some(_) => {
                entry.stride = Some(delta);
                entry.confidence = entry.confidence.saturating_sub(1);
            }
        }
        entry.last_addr = acc.vaddr;

        let stride = entry.stride.unwrap_or(0);
        if entry.confidence < self.config.confidence_threshold || stride == 0 {
            return Vec::new();
        }
        let line = self.config.line_size;
        (1..=i64::from(self.config.degree))
            .filter_map(|k| acc.vaddr.checked_add_signed(stride.checked_mul(k)?))
            .filter(|&t| t / line != acc.vaddr / line)
            .map(|target| PrefetchRequest {
                target,
                cause: PrefetchCause::Stride,
                origin_task: acc.task,
            })
            .collect()
    }

    fn allocate(&mut self, tag: u8, vaddr: u64) {
        let entry = StrideEntry {
            ip_tag: tag,
            last_addr: vaddr,
            stride: None,
            confidence: 0,
            last_use: self.clock,
        };
        if self.entries.len() < self.config.capacity {
            self.entries.push(entry);
        } else if let Some(victim) = self.entries.iter_mut().min_by_key(|e| e.last_use) {
            *victim = entry;
        }
    }
}
