//! Simulated machine layout: physical cores, SMT siblings and the domains that
//! share one prefetcher and one cache.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CoreId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainId(pub usize);

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainGranularity {
    /// Each physical core (with its SMT siblings) owns a prefetcher.
    #[default]
    PerPhysicalCore,
    /// One prefetcher shared by every logical core.
    Global,
}

impl DomainGranularity {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainGranularity::PerPhysicalCore => "per_physical_core",
            DomainGranularity::Global => "global",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "per_physical_core" | "per_physical" => Some(DomainGranularity::PerPhysicalCore),
            "global" => Some(DomainGranularity::Global),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("physical core count must be at least 1")]
    NoPhysicalCores,
    #[error("SMT ways must be at least 1")]
    NoSmtWays,
    #[error("logical core {0} does not exist")]
    InvalidCore(usize),
}

/// Immutable description of the simulated machine.
///
/// Logical core ids are assigned physical-major: way `w` of physical core
/// `p` is logical core `p * smt_ways + w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    physical_cores: usize,
    smt_ways: usize,
    granularity: DomainGranularity,
    domains: Vec<Vec<CoreId>>,
    domain_of: Vec<DomainId>,
}

impl Topology {
    pub fn build(
        physical_cores: usize,
        smt_ways: usize,
        granularity: DomainGranularity,
    ) -> Result<Self, TopologyError> {
        if physical_cores == 0 {
            return Err(TopologyError::NoPhysicalCores);
        }
        if smt_ways == 0 {
            return Err(TopologyError::NoSmtWays);
        }
        let logical = physical_cores * smt_ways;
        let domain_of: Vec<DomainId> = (0..logical)
            .map(|id| match granularity {
                DomainGranularity::PerPhysicalCore => DomainId(id / smt_ways),
                DomainGranularity::Global => DomainId(0),
            })
            .collect();
        let domain_count = match granularity {
            DomainGranularity::PerPhysicalCore => physical_cores,
            DomainGranularity::Global => 1,
        };
        let mut domains = vec![Vec::new(); domain_count];
        for (id, d) in domain_of.iter().enumerate() {
            domains[d.0].push(CoreId(id));
        }
        Ok(Self {
            physical_cores,
            smt_ways,
            granularity,
            domains,
            domain_of,
        })
    }

    /// A single core without SMT.
    pub fn single_core() -> Self {
        Self::build(1, 1, DomainGranularity::PerPhysicalCore).expect("valid topology")
    }

    pub fn physical_core_count(&self) -> usize {
        self.physical_cores
    }

    pub fn smt_ways(&self) -> usize {
        self.smt_ways
    }

    pub fn granularity(&self) -> DomainGranularity {
        self.granularity
    }

    pub fn logical_core_count(&self) -> usize {
        self.domain_of.len()
    }

    pub fn domain_count(&self) -> usize {
        self.domains.len()
    }

    pub fn cores(&self) -> impl Iterator<Item = CoreId> + '_ {
        (0..self.logical_core_count()).map(CoreId)
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        (0..self.domains.len()).map(DomainId)
    }

    pub fn check_core(&self, core: CoreId) -> Result<(), TopologyError> {
        if core.0 < self.logical_core_count() {
            Ok(())
        } else {
            Err(TopologyError::InvalidCore(core.0))
        }
    }

    /// The unique sharing domain that contains `core`.
    pub fn sharing_domain_of(&self, core: CoreId) -> Result<DomainId, TopologyError> {
        self.domain_of
            .get(core.0)
            .copied()
            .ok_or(TopologyError::InvalidCore(core.0))
    }

    pub fn cores_in(&self, domain: DomainId) -> &[CoreId] {
        &self.domains[domain.0]
    }

    pub fn physical_core_of(&self, core: CoreId) -> Result<usize, TopologyError> {
        self.check_core(core)?;
        Ok(core.0 / self.smt_ways)
    }

    /// Logical cores backed by the same physical core as `core`, `core` included.
    pub fn siblings(&self, core: CoreId) -> Result<Vec<CoreId>, TopologyError> {
        let p = self.physical_core_of(core)?;
        Ok((p * self.smt_ways..(p + 1) * self.smt_ways)
            .map(CoreId)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn degenerate_machine() {
        let t = Topology::build(1, 1, DomainGranularity::PerPhysicalCore).unwrap();
        assert_eq!(t.logical_core_count(), 1);
        assert_eq!(t.domain_count(), 1);
        assert_eq!(t.sharing_domain_of(CoreId(0)), Ok(DomainId(0)));
        let g = Topology::build(1, 1, DomainGranularity::Global).unwrap();
        assert_eq!(g.sharing_domain_of(CoreId(0)), Ok(DomainId(0)));
    }

    #[test]
    fn two_by_two_per_physical() {
        let t = Topology::build(2, 2, DomainGranularity::PerPhysicalCore).unwrap();
        assert_eq!(t.logical_core_count(), 4);
        assert_eq!(t.cores_in(DomainId(0)), &[CoreId(0), CoreId(1)]);
        assert_eq!(t.cores_in(DomainId(1)), &[CoreId(2), CoreId(3)]);
        assert_eq!(t.sharing_domain_of(CoreId(3)), Ok(DomainId(1)));
        assert_eq!(t.siblings(CoreId(2)).unwrap(), vec![CoreId(2), CoreId(3)]);
    }

    #[test]
    fn global_domain() {
        let t = Topology::build(2, 1, DomainGranularity::Global).unwrap();
        assert_eq!(t.logical_core_count(), 2);
        assert_eq!(t.domain_count(), 1);
        assert_eq!(t.cores_in(DomainId(0)), &[CoreId(0), CoreId(1)]);
        assert_eq!(t.sharing_domain_of(CoreId(1)), Ok(DomainId(0)));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            Topology::build(0, 1, DomainGranularity::Global),
            Err(TopologyError::NoPhysicalCores)
        );
        assert_eq!(
            Topology::build(1, 0, DomainGranularity::Global),
            Err(TopologyError::NoSmtWays)
        );
        let t = Topology::single_core();
        assert_eq!(
            t.sharing_domain_of(CoreId(1)),
            Err(TopologyError::InvalidCore(1))
        );
    }

    proptest! {
        #[test]
        fn partition_and_sibling_cohesion(
            phys in 1usize..6,
            ways in 1usize..5,
            global in any::<bool>(),
        ) {
            let g = if global { DomainGranularity::Global } else { DomainGranularity::PerPhysicalCore };
            let t = Topology::build(phys, ways, g).unwrap();
            prop_assert_eq!(t.logical_core_count(), phys * ways);
            let mut seen = vec![0usize; t.logical_core_count()];
            for d in t.domains() {
                for c in t.cores_in(d) {
                    seen[c.0] += 1;
                    prop_assert_eq!(t.sharing_domain_of(*c).unwrap(), d);
                }
            }
            prop_assert!(seen.iter().all(|&n| n == 1));
            for c in t.cores() {
                let d = t.sharing_domain_of(c).unwrap();
                for s in t.siblings(c).unwrap() {
                    prop_assert_eq!(t.sharing_domain_of(s).unwrap(), d);
                }
            }
        }
    }
}
