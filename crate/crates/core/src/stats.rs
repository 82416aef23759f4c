//! Order statistics used by reports and benchmarks.

use std::time::Duration;

/// Linear-interpolation quantile (`q` in `[0, 1]`) of unsorted data.
/// `None` for empty input.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

/// Summary of per-call wall times in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyStats {
    pub samples: usize,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_durations(durations: &[Duration]) -> Self {
        let ms: Vec<f64> = durations.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        if ms.is_empty() {
            return LatencyStats::default();
        }
        LatencyStats {
            samples: ms.len(),
            median_ms: median(&ms).expect("non-empty"),
            q1_ms: quantile(&ms, 0.25).expect("non-empty"),
            q3_ms: quantile(&ms, 0.75).expect("non-empty"),
            min_ms: quantile(&ms, 0.0).expect("non-empty"),
            max_ms: quantile(&ms, 1.0).expect("non-empty"),
        }
    }
}
