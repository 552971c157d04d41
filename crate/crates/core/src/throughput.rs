//! Decode throughput arithmetic: total completion tokens over total
//! generation time.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSample {
    pub completion_tokens: u64,
    pub seconds: f64,
}

impl RunSample {
    pub fn tokens_per_second(&self) -> Option<f64> {
        (self.seconds > 0.0).then(|| self.completion_tokens as f64 / self.seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    /// Prompt length in tokens.
    pub input_length: u64,
    /// Runs attempted, including failures.
    pub runs: u32,
    pub failures: u32,
    pub partial: bool,
    /// `None` when no successful run took measurable time.
    pub tokens_per_second: Option<f64>,
    pub samples: Vec<RunSample>,
}

impl ThroughputReport {
    pub fn from_samples(input_length: u64, samples: Vec<RunSample>, failures: u32) -> Self {
        let tokens: u64 = samples.iter().map(|s| s.completion_tokens).sum();
        let seconds: f64 = samples.iter().map(|s| s.seconds).sum();
        Self {
            input_length,
            runs: samples.len() as u32 + failures,
            failures,
            partial: failures > 0,
            tokens_per_second: (seconds > 0.0).then(|| tokens as f64 / seconds),
            samples,
        }
    }

    /// Pool the runs of two reports taken at the same input length.
    pub fn merge(mut self, other: ThroughputReport) -> Self {
        self.samples.extend(other.samples);
        Self::from_samples(self.input_length, self.samples, self.failures + other.failures)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hundred_tokens_per_second() {
        let r = ThroughputReport::from_samples(10, vec![RunSample { completion_tokens: 100, seconds: 1.0 }], 0);
        assert_eq!(r.tokens_per_second, Some(100.0));
        assert!(!r.partial);
    }

    #[test]
    fn three_half_second_runs() {
        let s = RunSample { completion_tokens: 50, seconds: 0.5 };
        let r = ThroughputReport::from_samples(10, vec![s; 3], 0);
        assert_eq!(r.tokens_per_second, Some(100.0));
        assert_eq!(r.samples.len(), 3);
    }

    #[test]
    fn failures_mark_partial() {
        let r = ThroughputReport::from_samples(10, vec![], 2);
        assert!(r.partial);
        assert_eq!(r.runs, 2);
        assert_eq!(r.tokens_per_second, None);
    }
}
