//! Spatial memory streaming: records which lines of a region are touched
//! and replays the footprint when a new region is entered at the same
//! trigger offset.

use serde::{Deserialize, Serialize};

use super::{MemoryAccess, PrefetchCause, PrefetchRequest, PrefetcherConfigError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SmsConfig {
    pub region_size: u64,
    pub capacity: usize,
    pub line_size: u64,
}

impl Default for SmsConfig {
    fn default() -> Self {
        Self {
            region_size: 1024,
            capacity: 16,
            line_size: 64,
        }
    }
}

impl SmsConfig {
    pub fn lines_per_region(&self) -> u64 {
        self.region_size / self.line_size
    }
}

/// A committed footprint, keyed by the line offset that opened its region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SmsEntry {
    pub region_base: u64,
    pub trigger_offset: u32,
    pub pattern: u64,
    last_use: u64,
}

/// Footprint of the region currently being accessed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SmsTraining {
    pub region_base: u64,
    pub trigger_offset: u32,
    pub pattern: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmsPrefetcher {
    config: SmsConfig,
    entries: Vec<SmsEntry>,
    training: Option<SmsTraining>,
    clock: u64,
    enabled: bool,
    pub(super) clear_on_disable: bool,
}

impl SmsPrefetcher {
    pub fn new(config: SmsConfig) -> Result<Self, PrefetcherConfigError> {
        let lines = config.region_size / config.line_size.max(1);
        if !config.region_size.is_power_of_two()
            || config.region_size < config.line_size
            || lines > 64
        {
            return Err(PrefetcherConfigError::SmsRegion {
                region: config.region_size,
            });
        }
        if config.capacity == 0 {
            return Err(PrefetcherConfigError::SmsCapacity);
        }
        Ok(Self {
            config,
            entries: Vec::new(),
            training: None,
            clock: 0,
            enabled: true,
            clear_on_disable: false,
        })
    }

    pub fn config(&self) -> &SmsConfig {
        &self.config
    }

    pub fn entries(&self) -> &[SmsEntry] {
        &self.entries
    }

    pub fn training(&self) -> Option<&SmsTraining> {
        self.training.as_ref()
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
        self.training = None;
        self.clock = 0;
    }

    pub fn observe(&mut self, acc: &MemoryAccess) -> Vec<PrefetchRequest> {
        if !self.enabled {
            return Vec::new();
        }
        self.clock += 1;
        let region = acc.vaddr & !(self.config.region_size - 1);
        let offset = ((acc.vaddr - region) / self.config.line_size) as u32;

        if let Some(t) = self.training.as_mut() {
            if t.region_base == region {
                t.pattern |= 1 << offset;
                return Vec::new();
            }
        }
        if let Some(done) = self.training.take() {
            self.commit(done);
        }

        let mut requests = Vec::new();
        let clock = self.clock;
        if let Some(entry) = self.entries.iter_mut().find(|e| e.trigger_offset == offset) {
            entry.last_use = clock;
            let replay = entry.pattern & !(1 << offset);
            requests.extend((0..64u64).filter(|b| replay & (1 << b) != 0).map(|b| {
                PrefetchRequest {
                    target: region + b * self.config.line_size,
                    cause: PrefetchCause::SmsReplay,
                    origin_task: acc.task,
                }
            }));
        }
        self.training = Some(SmsTraining {
            region_base: region,
            trigger_offset: offset,
            pattern: 1 << offset,
        });
        requests
    }

    fn commit(&mut self, t: SmsTraining) {
        let entry = SmsEntry {
            region_base: t.region_base,
            trigger_offset: t.trigger_offset,
            pattern: t.pattern,
            last_use: self.clock,
        };
        if let Some(slot) = self
            .entries
            .iter_mut()
            .find(|e| e.trigger_offset == t.trigger_offset)
        {
            *slot = entry;
        } else if self.entries.len() < self.config.capacity {
            self.entries.push(entry);
        } else if let Some(victim) = self.entries.iter_mut().min_by_key(|e| e.last_use) {
            *victim = entry;
        }
    }
}
