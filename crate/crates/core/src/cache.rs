//! Set-associative cache with strict LRU replacement and two fixed latencies.
//!
//! Lines are identified by their line address (`addr / line_size`), which
//! doubles as the tag. Each set keeps its lines in recency order, most
//! recently used first, so a line's position in that list is its LRU age.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Xorshift64Star;

/// Access latency of a line that is present (time units).
pub const DEFAULT_HIT_LATENCY: u32 = 96;
/// Access latency of a line that has to come from memory (time units).
pub const DEFAULT_MISS_LATENCY: u32 = 340;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub sets: usize,
    pub ways: usize,
    pub line_size: u64,
}

impl Default for CacheGeometry {
    fn default() -> Self {
        Self {
            sets: 64,
            ways: 8,
            line_size: 64,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("cache needs at least one set and one way")]
    Empty,
    #[error("line size {0} is not a power of two")]
    LineSize(u64),
    #[error("hit latency {hit} must be below miss latency {miss}")]
    Latencies { hit: u32, miss: u32 },
}

impl CacheGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.sets == 0 || self.ways == 0 {
            return Err(GeometryError::Empty);
        }
        if !self.line_size.is_power_of_two() {
            return Err(GeometryError::LineSize(self.line_size));
        }
        Ok(())
    }

    pub fn line_of(&self, addr: u64) -> u64 {
        addr / self.line_size
    }

    pub fn line_base(&self, addr: u64) -> u64 {
        addr & !(self.line_size - 1)
    }

    pub fn set_index(&self, addr: u64) -> usize {
        (self.line_of(addr) % self.sets as u64) as usize
    }

    /// Distance between consecutive addresses that map to the same set.
    pub fn set_stride(&self) -> u64 {
        self.sets as u64 * self.line_size
    }

    pub fn same_line(&self, a: u64, b: u64) -> bool {
        self.line_of(a) == self.line_of(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Latencies {
    pub hit: u32,
    pub miss: u32,
}

impl Default for Latencies {
    fn default() -> Self {
        Self {
            hit: DEFAULT_HIT_LATENCY,
            miss: DEFAULT_MISS_LATENCY,
        }
    }
}

impl Latencies {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.hit < self.miss {
            Ok(())
        } else {
            Err(GeometryError::Latencies {
                hit: self.hit,
                miss: self.miss,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineState {
    Hit,
    Miss,
}

impl LineState {
    pub fn as_str(self) -> &'static str {
        match self {
            LineState::Hit => "hit",
            LineState::Miss => "miss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub addr: u64,
    pub latency: u32,
    pub state: LineState,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub samples: Vec<ProbeSample>,
}

impl ProbeResult {
    pub fn hits(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.state == LineState::Hit)
            .count()
    }

    pub fn misses(&self) -> usize {
        self.samples.len() - self.hits()
    }

    pub fn states(&self) -> Vec<LineState> {
        self.samples.iter().map(|s| s.state).collect()
    }
}

/// Optional measurement noise: before a probed line is reloaded it is
/// flushed with a fixed probability, drawn from a seeded stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomFlushNoise {
    /// Probability in parts per million.
    pub flush_ppm: u32,
    rng: Xorshift64Star,
}

impl RandomFlushNoise {
    pub fn new(flush_probability: f64, seed: u64) -> Self {
        let ppm = (flush_probability.clamp(0.0, 1.0) * 1_000_000.0).round() as u32;
        Self {
            flush_ppm: ppm,
            rng: Xorshift64Star::new(seed),
        }
    }

    fn fires(&mut self) -> bool {
        self.rng.below(1_000_000) < u64::from(self.flush_ppm)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cache {
    geometry: CacheGeometry,
    latencies: Latencies,
    // Per set: line addresses, most recently used first.
    sets: Vec<Vec<u64>>,
    noise: Option<RandomFlushNoise>,
}

impl Cache {
    pub fn new(geometry: CacheGeometry, latencies: Latencies) -> Result<Self, GeometryError> {
        geometry.validate()?;
        latencies.validate()?;
        Ok(Self {
            geometry,
            latencies,
            sets: vec![Vec::with_capacity(geometry.ways); geometry.sets],
            noise: None,
        })
    }

    pub fn with_noise(mut self, noise: RandomFlushNoise) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn latencies(&self) -> &Latencies {
        &self.latencies
    }

    /// Demand load: returns the latency and leaves the line most recently used.
    pub fn access(&mut self, addr: u64) -> u32 {
        if self.touch(addr) {
            self.latencies.hit
        } else {
            self.latencies.miss
        }
    }

    /// Fill without a latency report (prefetch fills).
    pub fn install(&mut self, addr: u64) {
        self.touch(addr);
    }

    pub fn flush(&mut self, addr: u64) {
        let line = self.geometry.line_of(addr);
        let set = &mut self.sets[self.geometry.set_index(addr)];
        set.retain(|&l| l != line);
    }

    /// Timed reload of each line in order. Reloading installs the line.
    pub fn probe(&mut self, lines: &[u64]) -> ProbeResult {
        let samples = lines
            .iter()
            .map(|&addr| {
                if let Some(noise) = self.noise.as_mut() {
                    if noise.fires() {
                        self.flush(addr);
                    }
                }
                let latency = self.access(addr);
                let state = if latency == self.latencies.hit {
                    LineState::Hit
                } else {
                    LineState::Miss
                };
                ProbeSample {
                    addr,
                    latency,
                    state,
                }
            })
            .collect();
        ProbeResult { samples }
    }

    /// Presence test that does not disturb recency.
    pub fn contains(&self, addr: u64) -> bool {
        let line = self.geometry.line_of(addr);
        self.sets[self.geometry.set_index(addr)].contains(&line)
    }

    /// `(line address, LRU age)` pairs of one set, youngest first.
    pub fn set_contents(&self, set: usize) -> impl Iterator<Item = (u64, usize)> + '_ {
        self.sets[set]
            .iter()
            .copied()
            .enumerate()
            .map(|(age, l)| (l, age))
    }

    pub fn occupancy(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    fn touch(&mut self, addr: u64) -> bool {
        let line = self.geometry.line_of(addr);
        let ways = self.geometry.ways;
        let set = &mut self.sets[self.geometry.set_index(addr)];
        match set.iter().position(|&l| l == line) {
            Some(pos) => {
                set[..=pos].rotate_right(1);
                true
            }
            None => {
                if set.len() == ways {
                    set.pop();
                }
                set.insert(0, line);
                false
            }
        }
    }
}

/// `ways` addresses that share `target`'s set without sharing its line.
///
/// The geometry is known to the simulator, so the set is constructed
/// directly: consecutive multiples of the set stride above the target line.
pub fn build_eviction_set(geometry: &CacheGeometry, target: u64) -> Vec<u64> {
    let base = geometry.line_base(target);
    let stride = geometry.set_stride();
    (1..=geometry.ways as u64)
        .map(|k| base + k * stride)
        .collect()
}
