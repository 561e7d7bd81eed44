//! Gate statistics inside and outside short post-event regions.

use serde::{Deserialize, Serialize};

use super::events::EventSet;
use crate::data::MultiSeries;
use crate::diffcore::{NumArray, Tape};
use crate::error::{Error, Result};
use crate::lcontext::{generate_batch, GateMode};
use crate::predictor::{ModelParams, Variant};

pub const DEFAULT_EVENT_REGION: usize = 3;
const RATIO_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub mean_gate_event: Option<f64>,
    pub mean_gate_non_event: Option<f64>,
    pub retained_event: Option<f64>,
    pub retained_non_event: Option<f64>,
    pub event_steps: usize,
    pub non_event_steps: usize,
    /// (channel, segment) pairs holding both kinds of steps.
    pub pairs: usize,
    /// Pairs whose event-region mean gate strictly exceeds the non-event mean.
    pub pairs_event_higher: usize,
    pub fraction_event_higher: Option<f64>,
    pub segments: usize,
    pub region: usize,
}

#[derive(Default, Clone, Copy)]
struct Acc {
    gate: f64,
    kept: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, m: f64, d: f64) {
        self.gate += m;
        self.kept += (d * m).abs() / (d.abs() + RATIO_EPS);
        self.n += 1;
    }

    fn mean_gate(&self) -> Option<f64> {
        (self.n > 0).then(|| self.gate / self.n as f64)
    }

    fn mean_kept(&self) -> Option<f64> {
        (self.n > 0).then(|| self.kept / self.n as f64)
    }
}

/// Runs the context generator over non-overlapping `lookback` segments of
/// `series` and splits gate values by whether their step lies within
/// `region` steps from an event. Position 0 of each segment has no increment
/// and is skipped.
pub fn gate_event_analysis(
    model: &ModelParams,
    series: &MultiSeries,
    events: &[usize],
    region: usize,
) -> Result<GateReport> {
    let c = &model.config;
    if matches!(c.variant, Variant::NoLcontext | Variant::NoGating | Variant::RandContext) {
        return Err(Error::Config(format!("variant {} has no learned gate", c.variant)));
    }
    if series.n_vars() != c.n_vars {
        return Err(Error::Dimension(format!(
            "series has {} channels, model expects {}",
            series.n_vars(),
            c.n_vars
        )));
    }
    let (v, l) = (c.n_vars, c.lookback);
    let segments = series.len() / l;
    if segments == 0 {
        return Err(Error::Config(format!("series of {} steps is shorter than one segment of {l}", series.len())));
    }
    let mut sorted = events.to_vec();
    sorted.sort_unstable();
    let probe = EventSet { times: sorted, threshold: 0.0, min_gap: 0, scores: Vec::new() };

    let mut event_acc = Acc::default();
    let mut other_acc = Acc::default();
    let (mut pairs, mut higher) = (0, 0);
    for s in 0..segments {
        let window = series.slice(s * l, (s + 1) * l).values;
        let tape = Tape::new();
        let vars = model.lcontext.bind(&tape);
        let x = tape.constant(window.reshaped(vec![1, v, l])?);
        let tr = generate_batch(x, &vars, GateMode::Learned)?;
        let gates: NumArray = tr.gates.expect("learned gate").to_array();
        let delta = tr.delta.to_array();
        for ch in 0..v {
            let (mut ev, mut ne) = (Acc::default(), Acc::default());
            for tau in 1..l {
                let step = s * l + tau;
                let (m, d) = (gates.at2(ch, tau), delta.at2(ch, tau));
                if probe.covers(step, region) {
                    ev.push(m, d);
                    event_acc.push(m, d);
                } else {
                    ne.push(m, d);
                    other_acc.push(m, d);
                }
            }
            if let (Some(a), Some(b)) = (ev.mean_gate(), ne.mean_gate()) {
                pairs += 1;
                if a > b {
                    higher += 1;
                }
            }
        }
    }
    Ok(GateReport {
        mean_gate_event: event_acc.mean_gate(),
        mean_gate_non_event: other_acc.mean_gate(),
        retained_event: event_acc.mean_kept(),
        retained_non_event: other_acc.mean_kept(),
        event_steps: event_acc.n,
        non_event_steps: other_acc.n,
        pairs,
        pairs_event_higher: higher,
        fraction_event_higher: (pairs > 0).then(|| higher as f64 / pairs as f64),
        segments,
        region,
    })
}
