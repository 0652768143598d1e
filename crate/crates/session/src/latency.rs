//! Per-tick compute-time summaries.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TickTiming {
    pub belief_us: f64,
    pub policy_us: f64,
    pub total_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles; zeros for an empty sample.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Self {
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub ticks: usize,
    pub tick_period_us: f64,
    pub belief_us: Percentiles,
    pub policy_us: Percentiles,
    pub total_us: Percentiles,
}

impl LatencyReport {
    pub fn within_budget(&self) -> bool {
        self.total_us.p99 < self.tick_period_us
    }
}

pub fn latency_report(timings: &[TickTiming], tick_rate: f64) -> LatencyReport {
    LatencyReport {
        ticks: timings.len(),
        tick_period_us: 1e6 / tick_rate,
        belief_us: Percentiles::of(timings.iter().map(|t| t.belief_us)),
        policy_us: Percentiles::of(timings.iter().map(|t| t.policy_us)),
        total_us: Percentiles::of(timings.iter().map(|t| t.total_us)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let p = Percentiles::of((1..=100).map(f64::from));
        assert_eq!((p.p50, p.p90, p.p99, p.max), (50.0, 90.0, 99.0, 100.0));
        assert_eq!(Percentiles::of([]), Percentiles::default());
    }
}
