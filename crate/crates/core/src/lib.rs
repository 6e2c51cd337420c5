//! Deterministic simulator of prefetcher-equipped multi-core/SMT machines,
//! an OS scheduler that disables the shared prefetcher while protected
//! tasks run, and an attack harness measuring what leaks through it.

pub mod attack;
pub mod cache;
pub mod config;
pub mod machine;
pub mod modelcheck;
pub mod par;
pub mod perf;
pub mod prefetch;
pub mod report;
pub mod rng;
pub mod sched;
pub mod stage;
pub mod stats;
pub mod topology;
