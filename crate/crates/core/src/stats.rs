//! Binomial acceptance intervals for "indistinguishable from guessing".

use statrs::distribution::{Binomial, DiscreteCDF};

/// Significance level used throughout the harness.
pub const ALPHA: f64 = 0.01;

/// Two-sided acceptance region of a binomial test, as success counts.
///
/// Returns `(lo, hi)` such that `P(X < lo) <= alpha/2` and
/// `P(X > hi) <= alpha/2` for `X ~ Binomial(n, p)`.
pub fn acceptance_counts(n: u64, p: f64, alpha: f64) -> (u64, u64) {
    let dist = Binomial::new(p, n).expect("p in [0, 1]");
    let lo = dist.inverse_cdf(alpha / 2.0);
    let hi = dist.inverse_cdf(1.0 - alpha / 2.0);
    (lo, hi)
}

/// The acceptance region as accuracy fractions.
pub fn chance_interval(n: u64, p: f64, alpha: f64) -> (f64, f64) {
    let (lo, hi) = acceptance_counts(n, p, alpha);
    (lo as f64 / n as f64, hi as f64 / n as f64)
}

/// Whether `correct` successes out of `n` are consistent with guessing at
/// rate `p` at the given level.
pub fn consistent_with_chance(correct: u64, n: u64, p: f64, alpha: f64) -> bool {
    let (lo, hi) = acceptance_counts(n, p, alpha);
    (lo..=hi).contains(&correct)
}
