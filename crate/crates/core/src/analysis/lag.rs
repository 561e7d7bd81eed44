//! Error mass in the neighborhoods following change events.

use serde::{Deserialize, Serialize};

use super::events::EventSet;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagReport {
    pub tail_auc: f64,
    pub excess_auc: f64,
    /// Mean absolute error over steps outside every event window.
    pub baseline: f64,
    pub window: usize,
    pub event_count: usize,
}

/// Sums |error| over `[e, e + window)` for each event (clipped at the end of
/// the trace), plus the part above the non-event baseline.
pub fn lag_auc(errors: &[f64], events: &[usize], window: usize) -> Result<LagReport> {
    if window == 0 {
        return Err(Error::Config("lag window must be at least 1".into()));
    }
    let n = errors.len();
    let mut in_event = vec![false; n];
    for &e in events {
        for flag in in_event.iter_mut().take((e + window).min(n)).skip(e) {
            *flag = true;
        }
    }
    let outside: Vec<f64> = errors.iter().zip(&in_event).filter(|(_, &f)| !f).map(|(e, _)| e.abs()).collect();
    let baseline = if outside.is_empty() {
        0.0
    } else {
        outside.iter().sum::<f64>() / outside.len() as f64
    };
    let (mut tail, mut excess) = (0.0, 0.0);
    for &e in events {
        for err in errors.iter().take((e + window).min(n)).skip(e) {
            tail += err.abs();
            excess += (err.abs() - baseline).max(0.0);
        }
    }
    Ok(LagReport { tail_auc: tail, excess_auc: excess, baseline, window, event_count: events.len() })
}

pub fn lag_auc_for(errors: &[f64], events: &EventSet, window: usize) -> Result<LagReport> {
    lag_auc(errors, &events.times, window)
}
