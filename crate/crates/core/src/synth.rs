//! Two-mode level-shift generator with labelled switch times.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::MultiSeries;
use crate::diffcore::NumArray;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeConfig {
    pub slope: f64,
    pub noise_std: f64,
    /// Level added while in mode 2.
    pub offset: f64,
    pub min_dwell: usize,
    pub max_dwell: usize,
    pub length: usize,
    pub seed: u64,
    /// Independent noisy copies of the same regime path.
    pub n_channels: usize,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            slope: 0.01,
            noise_std: 0.1,
            offset: 3.0,
            min_dwell: 100,
            max_dwell: 300,
            length: 8000,
            seed: 0,
            n_channels: 1,
        }
    }
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.min_dwell && self.min_dwell <= self.max_dwell && self.max_dwell < self.length) {
            return Err(Error::Config(format!(
                "dwell range [{}, {}] invalid for length {}",
                self.min_dwell, self.max_dwell, self.length
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std must be finite and >= 0, got {}", self.noise_std)));
        }
        if !self.slope.is_finite() || !self.offset.is_finite() {
            return Err(Error::Config("slope and offset must be finite".into()));
        }
        if self.n_channels == 0 {
            return Err(Error::Config("n_channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSeries {
    pub series: MultiSeries,
    /// 1 or 2 per step.
    pub regime: Vec<u8>,
    /// Steps whose label differs from the previous step.
    pub switch_times: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Labels {
    switch_times: Vec<usize>,
    regime: Vec<u8>,
    config: RegimeConfig,
}

pub fn gen_regime_switch(cfg: &RegimeConfig) -> Result<LabeledSeries> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut regime = Vec::with_capacity(cfg.length);
    let mut switch_times = Vec::new();
    let mut mode = 1u8;
    while regime.len() < cfg.length {
        let dwell = rng.gen_range(cfg.min_dwell..=cfg.max_dwell);
        let run = dwell.min(cfg.length - regime.len());
        regime.extend(std::iter::repeat_n(mode, run));
        if regime.len() < cfg.length {
            switch_times.push(regime.len());
            mode = 3 - mode;
        }
    }

    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut values = Vec::with_capacity(cfg.n_channels * cfg.length);
    for _ in 0..cfg.n_channels {
        for (t, &m) in regime.iter().enumerate() {
            let level = if m == 2 { cfg.offset } else { 0.0 };
            values.push(cfg.slope * t as f64 + level + noise.sample(&mut rng));
        }
    }
    let channels = if cfg.n_channels == 1 {
        vec!["value".to_string()]
    } else {
        (0..cfg.n_channels).map(|c| format!("value_{c}")).collect()
    };
    let series = MultiSeries::new(channels, NumArray::new(vec![cfg.n_channels, cfg.length], values)?, None)?;
    Ok(LabeledSeries { series, regime, switch_times })
}

/// Sidecar path next to a CSV: `name.csv` becomes `name.labels.json`.
pub fn labels_path(csv: &Path) -> PathBuf {
    csv.with_extension("labels.json")
}

impl LabeledSeries {
    /// Writes the CSV and its label sidecar; returns the sidecar path.
    pub fn write(&self, csv: impl AsRef<Path>, cfg: &RegimeConfig) -> Result<PathBuf> {
        let csv = csv.as_ref();
        self.series.write_csv(csv)?;
        let side = labels_path(csv);
        let labels = Labels {
            switch_times: self.switch_times.clone(),
            regime: self.regime.clone(),
            config: *cfg,
        };
        fs::write(&side, serde_json::to_string_pretty(&labels)?).map_err(|e| Error::io(&side, e))?;
        Ok(side)
    }
}

/// Reads the switch times from a sidecar written by [`LabeledSeries::write`].
pub fn read_switch_times(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Labels = serde_json::from_str(&text)?;
    Ok(labels.switch_times)
}
