//! Exponential backoff schedule for transport retries.

use core::time::Duration;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::perturb::unit_draw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter {
    None,
    /// Uniform in `[0, ceiling]`.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    pub factor: f64,
    #[serde(with = "millis")]
    pub max_backoff: Duration,
    pub jitter: Jitter,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
            factor: 2.0,
            max_backoff: Duration::from_secs(60),
            jitter: Jitter::Full,
        }
    }
}

impl RetryPolicy {
    /// Upper bound of the wait after failed attempt `attempt` (1-based).
    /// Non-decreasing in `attempt`.
    pub fn ceiling(&self, attempt: u32) -> Duration {
        let cap = self.max_backoff.as_secs_f64();
        let mut secs = self.initial_backoff.as_secs_f64();
        for _ in 1..attempt {
            if secs >= cap {
                break;
            }
            secs *= self.factor.max(1.0);
        }
        Duration::from_secs_f64(secs.min(cap))
    }

    /// Wait after failed attempt `attempt`, jittered per policy.
    pub fn delay<R: RngCore + ?Sized>(&self, attempt: u32, rng: &mut R) -> Duration {
        let ceiling = self.ceiling(attempt);
        match self.jitter {
            Jitter::None => ceiling,
            Jitter::Full => ceiling.mul_f64(unit_draw(rng)),
        }
    }
}

mod millis {
    use core::time::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule() {
        let p = RetryPolicy::default();
        assert_eq!(p.ceiling(1), Duration::from_secs(1));
        assert_eq!(p.ceiling(2), Duration::from_secs(2));
        assert_eq!(p.ceiling(3), Duration::from_secs(4));
        assert_eq!(p.ceiling(40), Duration::from_secs(60));
    }

    #[test]
    fn full_jitter_within_ceiling() {
        let p = RetryPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for attempt in 1..10 {
            for _ in 0..100 {
                assert!(p.delay(attempt, &mut rng) <= p.ceiling(attempt));
            }
        }
    }

    #[test]
    fn serde_in_millis() {
        let json = serde_json::to_string(&RetryPolicy::default()).unwrap();
        assert!(json.contains("\"initial_backoff\":1000"), "{json}");
        let back: RetryPolicy = serde_json::from_str(&json).unwrap();
        assert_eq!(back, RetryPolicy::default());
    }
}
