//! Per-phase wall-clock accounting for a training experience.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Seconds spent in each training phase of one experience.
///
/// `overall` covers the training loop only; feature extraction runs while
/// frames are being acquired and is reported separately.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub feature_extraction: f64,
    pub forward: f64,
    pub backward: f64,
    pub weights_update: f64,
    pub overall: f64,
}

impl TimingBreakdown {
    pub fn phase_sum(&self) -> f64 {
        self.forward + self.backward + self.weights_update
    }
}

/// Splits a span of time into consecutive laps charged to phases, so the
/// phases partition the span exactly.
#[derive(Debug)]
pub struct PhaseClock {
    start: Instant,
    last: Instant,
    pub feature_extraction: Duration,
    pub forward: Duration,
    pub backward: Duration,
    pub weights_update: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    FeatureExtraction,
    Forward,
    Backward,
    WeightsUpdate,
}

impl PhaseClock {
    pub fn start() -> Self {
        let now = Instant::now();
        PhaseClock {
            start: now,
            last: now,
            feature_extraction: Duration::ZERO,
            forward: Duration::ZERO,
            backward: Duration::ZERO,
            weights_update: Duration::ZERO,
        }
    }

    /// Charges the time since the previous lap to `phase`.
    pub fn lap(&mut self, phase: Phase) {
        let now = Instant::now();
        let d = now - self.last;
        self.last = now;
        match phase {
            Phase::FeatureExtraction => self.feature_extraction += d,
            Phase::Forward => self.forward += d,
            Phase::Backward => self.backward += d,
            Phase::WeightsUpdate => self.weights_update += d,
        }
    }

    /// Restarts the overall span at the current lap boundary.
    pub fn begin_training(&mut self) {
        self.start = self.last;
    }

    pub fn finish(self) -> TimingBreakdown {
        let overall = self.last - self.start;
        TimingBreakdown {
            feature_extraction: self.feature_extraction.as_secs_f64(),
            forward: self.forward.as_secs_f64(),
            backward: self.backward.as_secs_f64(),
            weights_update: self.weights_update.as_secs_f64(),
            overall: overall.as_secs_f64(),
        }
    }
}

/// Smallest nonzero step observed between consecutive monotonic clock
/// reads, in seconds.
pub fn timer_granularity() -> f64 {
    let mut best = Duration::MAX;
    for _ in 0..64 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best.as_secs_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn laps_partition_the_span() {
        let mut c = PhaseClock::start();
        c.lap(Phase::FeatureExtraction);
        c.begin_training();
        for _ in 0..50 {
            std::hint::black_box((0..1000).sum::<u64>());
            c.lap(Phase::Forward);
            c.lap(Phase::Backward);
        }
        let fw = c.forward + c.backward + c.weights_update;
        let span = c.last - c.start;
        assert_eq!(fw, span);
        let t = c.finish();
        assert_eq!(t.weights_update, 0.0);
        assert!((t.overall - t.phase_sum()).abs() < 1e-9);
    }

    #[test]
    fn granularity_is_positive_and_small() {
        let g = timer_granularity();
        assert!(g > 0.0 && g < 1e-2, "{g}");
    }
}
