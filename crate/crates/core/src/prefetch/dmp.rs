//! Data memory-dependent prefetcher: scans the words of recently filled
//! lines and dereferences any word that looks like a mapped, aligned pointer.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{MemoryAccess, PrefetchCause, PrefetchRequest, PrefetcherConfigError, WORD_SIZE};

/// Half-open address interval `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddrRange {
    pub lo: u64,
    pub hi: u64,
}

impl AddrRange {
    pub fn contains(&self, addr: u64) -> bool {
        self.lo <= addr && addr < self.hi
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DmpConfig {
    pub valid_ranges: Vec<AddrRange>,
    pub history_depth: usize,
    pub line_size: u64,
}

impl Default for DmpConfig {
    fn default() -> Self {
        Self {
            valid_ranges: vec![AddrRange {
                lo: 0x4000_0000,
                hi: 0x4100_0000,
            }],
            history_depth: 1,
            line_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DmpPrefetcher {
    config: DmpConfig,
    // (line address, words) of the most recent fills, newest last.
    history: VecDeque<(u64, Vec<u64>)>,
    enabled: bool,
    pub(super) clear_on_disable: bool,
}

impl DmpPrefetcher {
    pub fn new(config: DmpConfig) -> Result<Self, PrefetcherConfigError> {
        if config.history_depth == 0 {
            return Err(PrefetcherConfigError::DmpHistory);
        }
        let mut sorted = config.valid_ranges.clone();
        sorted.sort_by_key(|r| r.lo);
        for (i, r) in sorted.iter().enumerate() {
            let overlaps = sorted.get(i + 1).is_some_and(|next| next.lo < r.hi);
            if r.lo >= r.hi || overlaps {
                return Err(PrefetcherConfigError::DmpRange { lo: r.lo, hi: r.hi });
            }
        }
        Ok(Self {
            config,
            history: VecDeque::new(),
            enabled: true,
            clear_on_disable: false,
        })
    }

    pub fn config(&self) -> &DmpConfig {
        &self.config
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
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
        self.history.clear();
    }

    pub fn looks_like_pointer(&self, word: u64) -> bool {
        word.is_multiple_of(WORD_SIZE) && self.config.valid_ranges.iter().any(|r| r.contains(word))
    }

    pub fn observe(&mut self, acc: &MemoryAccess, line_contents: &[u64]) -> Vec<PrefetchRequest> {
        if !self.enabled {
            return Vec::new();
        }
        let line = acc.vaddr / self.config.line_size;
        self.history.retain(|(l, _)| *l != line);
        self.history.push_back((line, line_contents.to_vec()));
        while self.history.len() > self.config.history_depth {
            self.history.pop_front();
        }

        let mut requests: Vec<PrefetchRequest> = Vec::new();
        for (_, words) in &self.history {
            for &w in words {
                if !self.looks_like_pointer(w) || w / self.config.line_size == line {
                    continue;
                }
                if requests.iter().any(|r| r.target == w) {
                    continue;
                }
                requests.push(PrefetchRequest {
                    target: w,
                    cause: PrefetchCause::DmpDeref,
                    origin_task: acc.task,
                });
            }
        }
        requests
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(p: &mut DmpPrefetcher, words: &[u64]) -> Vec<u64> {
        p.observe(&MemoryAccess::new(0x80, 0x1000), words)
            .into_iter()
            .map(|r| r.target)
            .collect()
    }

    #[test]
    fn non_pointers_ignored() {
        let mut p = DmpPrefetcher::new(DmpConfig::default()).unwrap();
        assert!(load(&mut p, &[0x0, 0xFFFF_FFFF]).is_empty());
    }

    #[test]
    fn valid_pointer_dereferenced() {
        let mut p = DmpPrefetcher::new(DmpConfig::default()).unwrap();
        assert_eq!(load(&mut p, &[0x7, 0x4000_2040, 0]), vec![0x4000_2040]);
    }

    #[test]
    fn masked_pointer_ignored() {
        let mut p = DmpPrefetcher::new(DmpConfig::default()).unwrap();
        let blinded = 0x4000_2040 ^ 0x5A5A_0000_0000_0000;
        assert!(load(&mut p, &[blinded]).is_empty());
        // Misaligned values inside the range do not count either.
        assert!(load(&mut p, &[0x4000_2041]).is_empty());
    }

    #[test]
    fn disabled_scans_nothing() {
        let mut p = DmpPrefetcher::new(DmpConfig::default()).unwrap();
        p.set_enabled(false);
        let before = p.clone();
        assert!(load(&mut p, &[0x4000_2040]).is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn deeper_history_rescans_older_fills() {
        let cfg = DmpConfig {
            history_depth: 2,
            ..DmpConfig::default()
        };
        let mut p = DmpPrefetcher::new(cfg).unwrap();
        p.observe(&MemoryAccess::new(0x80, 0x1000), &[0x4000_0100]);
        let t: Vec<u64> = p
            .observe(&MemoryAccess::new(0x80, 0x2000), &[0x4000_0200])
            .into_iter()
            .map(|r| r.target)
            .collect();
        assert_eq!(t, vec![0x4000_0100, 0x4000_0200]);
    }

    #[test]
    fn overlapping_ranges_rejected() {
        let cfg = DmpConfig {
            valid_ranges: vec![
                AddrRange { lo: 0, hi: 0x100 },
                AddrRange {
                    lo: 0x80,
                    hi: 0x200,
                },
            ],
            ..DmpConfig::default()
        };
        assert!(DmpPrefetcher::new(cfg).is_err());
        let empty = DmpConfig {
            valid_ranges: vec![AddrRange { lo: 5, hi: 5 }],
            ..DmpConfig::default()
        };
        assert!(DmpPrefetcher::new(empty).is_err());
    }
}
