//! Diagnostics: change events, post-event error mass, proxy regressions,
//! distance correlation, error-bound simulation and gate statistics.

mod bound;
mod dcor;
mod events;
mod gate;
mod lag;
mod proxy;
pub mod report;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use bound::{bound_sim, burn_in, BoundCheck, Disturbance, RhoPath, BURN_IN_LEVEL};
pub use dcor::dcor;
pub use events::{change_scores, detect_events, percentile, EventSet, DEFAULT_PERCENTILE};
pub use gate::{gate_event_analysis, GateReport, DEFAULT_EVENT_REGION};
pub use lag::{lag_auc, lag_auc_for, LagReport, DEFAULT_WINDOW};
pub use proxy::{event_neighborhoods, fit_proxy, samples_from_series, ProxyFit, ProxyForm, ProxySample};

use crate::data::MultiSeries;
use crate::diffcore::NumArray;
use crate::error::{Error, Result};
use crate::predictor::ModelParams;

/// First-step-ahead forecasts from every origin of a series, channel-averaged.
/// Entry `i` belongs to step `lookback + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingTrace {
    pub lookback: usize,
    pub pred: Vec<f64>,
    pub truth: Vec<f64>,
    /// Channel mean of `|pred - truth|` per step.
    pub abs_error: Vec<f64>,
    /// Channel mean of the newest input step of each origin's window.
    pub x_new: Vec<f64>,
    /// Channel mean of the step that left the window since the previous origin.
    pub x_old: Vec<f64>,
}

impl RollingTrace {
    pub fn len(&self) -> usize {
        self.pred.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pred.is_empty()
    }
}

fn channel_mean(series: &MultiSeries, t: usize) -> f64 {
    (0..series.n_vars()).map(|c| series.channel(c)[t]).sum::<f64>() / series.n_vars() as f64
}

pub fn rolling_first_step(model: &ModelParams, series: &MultiSeries) -> Result<RollingTrace> {
    let c = &model.config;
    if series.n_vars() != c.n_vars {
        return Err(Error::Dimension(format!(
            "series has {} channels, model expects {}",
            series.n_vars(),
            c.n_vars
        )));
    }
    let l = c.lookback;
    let n = series.len();
    if n <= l {
        return Err(Error::Config(format!("series of {n} steps leaves no target after lookback {l}")));
    }
    let origins: Vec<usize> = (0..n - l).collect();
    let mut trace = RollingTrace {
        lookback: l,
        pred: Vec::with_capacity(origins.len()),
        truth: Vec::with_capacity(origins.len()),
        abs_error: Vec::with_capacity(origins.len()),
        x_new: Vec::with_capacity(origins.len()),
        x_old: Vec::with_capacity(origins.len()),
    };
    for chunk in origins.chunks(64) {
        let windows: Vec<NumArray> = chunk.iter().map(|&o| series.slice(o, o + l).values).collect();
        let preds = model.forecast_batch(&windows)?;
        for (&o, p) in chunk.iter().zip(&preds) {
            let step = o + l;
            let mut err = 0.0;
            let mut mean = 0.0;
            for ch in 0..c.n_vars {
                let y = series.channel(ch)[step];
                err += (p.at2(ch, 0) - y).abs();
                mean += p.at2(ch, 0);
            }
            trace.pred.push(mean / c.n_vars as f64);
            trace.truth.push(channel_mean(series, step));
            trace.abs_error.push(err / c.n_vars as f64);
            trace.x_new.push(channel_mean(series, o + l - 1));
            trace.x_old.push(if o == 0 { f64::NAN } else { channel_mean(series, o - 1) });
        }
    }
    Ok(trace)
}

/// Per-step lag diagnostics of one model on one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagAnalysis {
    pub report: LagReport,
    pub trace: RollingTrace,
    pub events: EventSet,
}

/// Detects events on the forecast-covered part of `series` and scores the
/// first-step errors around them.
pub fn lag_analysis(
    model: &ModelParams,
    series: &MultiSeries,
    window: usize,
    percentile_level: f64,
    min_gap: usize,
) -> Result<LagAnalysis> {
    let trace = rolling_first_step(model, series)?;
    let covered = series.slice(trace.lookback, series.len());
    let events = detect_events(&covered, percentile_level, min_gap);
    let report = lag_auc(&trace.abs_error, &events.times, window)?;
    Ok(LagAnalysis { report, trace, events })
}

impl LagAnalysis {
    /// Columns `step,pred,truth,abs_error,score,in_event`.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(["step", "pred", "truth", "abs_error", "score", "in_event"])?;
        for i in 0..self.trace.len() {
            w.write_record([
                (i + self.trace.lookback).to_string(),
                format!("{:?}", self.trace.pred[i]),
                format!("{:?}", self.trace.truth[i]),
                format!("{:?}", self.trace.abs_error[i]),
                format!("{:?}", self.events.scores[i]),
                u8::from(self.events.covers(i, self.report.window)).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Proxy tuples restricted to the event neighborhoods, grouped by event.
    pub fn proxy_samples(&self) -> Result<Vec<ProxySample>> {
        let all = samples_from_series(&self.trace.pred, &self.trace.x_new, &self.trace.x_old)?;
        // tuple k pairs entries k and k + 1 of the trace
        Ok(event_neighborhoods(&all, |k| k + 1, &self.events.times, self.report.window))
    }
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}
