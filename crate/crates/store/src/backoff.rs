use std::time::Duration;

use serde::{Deserialize, Serialize};
use smearscan_core::hash::content_hash;

/// Exponential retry schedule with deterministic per-record jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: f64,
    pub cap: Duration,
    /// Relative jitter amplitude; 0.2 means ±20%.
    pub jitter: f64,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base: Duration::from_secs(2),
            factor: 2.0,
            cap: Duration::from_secs(300),
            jitter: 0.2,
        }
    }
}

impl BackoffPolicy {
    /// Nominal delay before retry number `attempts` (1-based), without jitter.
    pub fn nominal(&self, attempts: u32) -> Duration {
        let exp = attempts.saturating_sub(1).min(64) as i32;
        let secs = self.base.as_secs_f64() * self.factor.powi(exp);
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }

    /// Jittered delay, never above `cap`. The jitter is a pure function of
    /// `key` and `attempts`.
    pub fn delay(&self, attempts: u32, key: &str) -> Duration {
        let digest = content_hash(format!("{key}:{attempts}").as_bytes());
        let u = u64::from_str_radix(&digest[..16], 16).expect("hex digest") as f64 / u64::MAX as f64;
        let scale = 1.0 + self.jitter * (2.0 * u - 1.0);
        let secs = self.nominal(attempts).as_secs_f64() * scale;
        Duration::from_secs_f64(secs.min(self.cap.as_secs_f64()))
    }
}
