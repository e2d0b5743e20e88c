//! Bounded exponential backoff with seeded jitter.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Fraction of the nominal delay added as uniform jitter, in `[0, 1]`.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, ..Self::default() }
    }

    /// Delay before retry number `retry` (0-based): `base * 2^retry`, capped,
    /// plus up to `jitter` of itself.
    pub fn delay(&self, retry: u32, rng: &mut impl Rng) -> Duration {
        let nominal = self
            .base_delay_ms
            .saturating_mul(1u64 << retry.min(32))
            .min(self.max_delay_ms);
        let extra = if self.jitter > 0.0 && nominal > 0 {
            (nominal as f64 * self.jitter * rng.random::<f64>()) as u64
        } else {
            0
        };
        Duration::from_millis(nominal + extra)
    }
}

#[derive(Debug)]
pub struct Outcome<T, E> {
    pub result: Result<T, E>,
    pub attempts: u32,
    pub slept: Duration,
}

/// Runs `op` until it succeeds, fails with a non-retryable error, or the
/// retry budget is spent. Jitter is drawn from `seed`, so two runs with the
/// same seed back off identically.
pub fn run<T, E>(
    policy: &RetryPolicy,
    seed: u64,
    mut op: impl FnMut(u32) -> Result<T, E>,
    retryable: impl Fn(&E) -> bool,
) -> Outcome<T, E> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slept = Duration::ZERO;
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op(attempt) {
            Ok(v) => return Outcome { result: Ok(v), attempts: attempt, slept },
            Err(e) => {
                if attempt > policy.max_retries || !retryable(&e) {
                    return Outcome { result: Err(e), attempts: attempt, slept };
                }
                let delay = policy.delay(attempt - 1, &mut rng);
                tracing::warn!(attempt, delay_ms = delay.as_millis() as u64, "retrying after transient failure");
                std::thread::sleep(delay);
                slept += delay;
            }
        }
    }
}
