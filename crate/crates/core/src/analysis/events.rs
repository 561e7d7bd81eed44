//! Change events from aggregated first differences.

use serde::{Deserialize, Serialize};

use crate::data::MultiSeries;

pub const DEFAULT_PERCENTILE: f64 = 90.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSet {
    pub times: Vec<usize>,
    pub threshold: f64,
    pub min_gap: usize,
    /// Per-step change intensity; `scores[0]` is 0 since step 0 has no predecessor.
    pub scores: Vec<f64>,
}

impl EventSet {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Whether `t` falls in `[e, e + width)` for some event `e`.
    pub fn covers(&self, t: usize, width: usize) -> bool {
        // times are sorted; only the last event at or before t can cover it
        match self.times.partition_point(|&e| e <= t) {
            0 => false,
            i => t < self.times[i - 1] + width,
        }
    }
}

/// Mean over channels of absolute first differences of each standardized
/// channel. Constant channels contribute nothing.
pub fn change_scores(series: &MultiSeries) -> Vec<f64> {
    let n = series.len();
    let v = series.n_vars();
    let mut scores = vec![0.0; n];
    for c in 0..v {
        let x = series.channel(c);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if sd == 0.0 || !sd.is_finite() {
            continue;
        }
        for t in 1..n {
            scores[t] += (x[t] - x[t - 1]).abs() / sd / v as f64;
        }
    }
    scores
}

/// Linear-interpolated percentile of `values` (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
}

/// Steps whose score strictly exceeds the percentile threshold, thinned
/// left to right so kept events are at least `min_gap` apart.
pub fn detect_events(series: &MultiSeries, percentile_level: f64, min_gap: usize) -> EventSet {
    let scores = change_scores(series);
    if scores.len() < 2 {
        return EventSet { times: Vec::new(), threshold: 0.0, min_gap, scores };
    }
    let threshold = percentile(&scores[1..], percentile_level);
    let mut times: Vec<usize> = Vec::new();
    for t in 1..scores.len() {
        if scores[t] > threshold && times.last().is_none_or(|&last| t - last >= min_gap) {
            times.push(t);
        }
    }
    EventSet { times, threshold, min_gap, scores }
}
