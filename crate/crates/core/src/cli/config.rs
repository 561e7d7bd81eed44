//! Flat `key=value` run configuration shared by every subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::analysis::{Disturbance, RhoPath};
use crate::error::{Error, Result};
use crate::predictor::{ModelConfig, Variant};
use crate::synth::RegimeConfig;
use crate::train::TrainConfig;

/// Every recognised key with its default.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    // synthetic data
    ("slope", "0.01"),
    ("noise_std", "0.1"),
    ("offset", "3.0"),
    ("min_dwell", "100"),
    ("max_dwell", "300"),
    ("length", "8000"),
    ("n_channels", "1"),
    // model
    ("lookback", "96"),
    ("horizon", "96"),
    ("patch_len", "16"),
    ("n_pos", "2"),
    ("hidden", "128"),
    ("kernel_size", "3"),
    ("variant", "full"),
    // training and data
    ("lr", "0.0001"),
    ("batch_size", "16"),
    ("max_epochs", "20"),
    ("patience", "3"),
    ("stride", "1"),
    ("train_frac", "0.7"),
    ("val_frac", "0.1"),
    ("split", "test"),
    // diagnostics
    ("window", "16"),
    ("min_gap", "auto"),
    ("percentile", "90"),
    ("region", "3"),
    ("proxy_train_frac", "0.7"),
    ("rho", "0.9"),
    ("rho_max", "none"),
    ("eps", "1.0"),
    ("steps", "100000"),
    ("disturbance", "adversarial"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { values: KEYS.iter().map(|(k, v)| (*k, v.to_string())).collect() }
    }
}

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line {}: expected key=value, got '{line}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            for (k, v) in parse_pairs(&text)? {
                cfg.set(&k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        let slot = KEYS
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(k, _)| *k)
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        self.values.insert(slot, value.into());
        Ok(())
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) -> Result<()> {
        match value {
            Some(v) => self.set(key, v.to_string()),
            None => Ok(()),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key '{key}' not registered"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse::<T>()
            .map_err(|e| Error::Config(format!("config key '{key}': cannot parse '{raw}': {e}")))
    }

    pub fn variant(&self) -> Result<Variant> {
        self.raw("variant").parse()
    }

    pub fn min_gap(&self) -> Result<usize> {
        match self.raw("min_gap") {
            "auto" => self.get("window"),
            _ => self.get("min_gap"),
        }
    }

    pub fn model_config(&self, n_vars: usize) -> Result<ModelConfig> {
        let variant = self.variant()?;
        let c = ModelConfig {
            n_vars,
            lookback: self.get("lookback")?,
            horizon: self.get("horizon")?,
            patch_len: self.get("patch_len")?,
            n_pos: self.get("n_pos")?,
            hidden: self.get("hidden")?,
            kernel_size: self.get("kernel_size")?,
            variant,
        }
        .with_variant(variant);
        c.validate()?;
        Ok(c)
    }

    /// Records an architecture (e.g. from a checkpoint) as the effective one.
    pub fn set_model(&mut self, c: &ModelConfig) -> Result<()> {
        self.set("lookback", c.lookback.to_string())?;
        self.set("horizon", c.horizon.to_string())?;
        self.set("patch_len", c.patch_len.to_string())?;
        self.set("n_pos", c.n_pos.to_string())?;
        self.set("hidden", c.hidden.to_string())?;
        self.set("kernel_size", c.kernel_size.to_string())?;
        self.set("variant", c.variant.name())
    }

    /// Variants without shared positional rows force `n_pos = 0`.
    pub fn normalize_variant(&mut self) -> Result<()> {
        if !self.variant()?.uses_shared_pos() {
            self.set("n_pos", "0")?;
        }
        Ok(())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            lr: self.get("lr")?,
            batch_size: self.get("batch_size")?,
            max_epochs: self.get("max_epochs")?,
            patience: self.get("patience")?,
            seed: self.get("seed")?,
            variant: self.variant()?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn regime_config(&self) -> Result<RegimeConfig> {
        let r = RegimeConfig {
            slope: self.get("slope")?,
            noise_std: self.get("noise_std")?,
            offset: self.get("offset")?,
            min_dwell: self.get("min_dwell")?,
            max_dwell: self.get("max_dwell")?,
            length: self.get("length")?,
            seed: self.get("seed")?,
            n_channels: self.get("n_channels")?,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn rho_path(&self) -> Result<RhoPath> {
        Ok(match self.raw("rho_max") {
            "none" | "" => RhoPath::Constant { rho: self.get("rho")? },
            _ => RhoPath::Varying { rho_max: self.get("rho_max")?, seed: self.get("seed")? },
        })
    }

    pub fn disturbance(&self) -> Result<Disturbance> {
        match self.raw("disturbance") {
            "adversarial" => Ok(Disturbance::Adversarial),
            "random" => Ok(Disturbance::Random { seed: self.get("seed")? }),
            "constant" => Ok(Disturbance::Constant),
            other => Err(Error::Config(format!(
                "disturbance must be adversarial, random or constant, got '{other}'"
            ))),
        }
    }

    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Writes `config.txt` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        let p = dir.join("config.txt");
        fs::write(&p, self.to_text()).map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let pairs = parse_pairs("# header\n\nlr = 0.001  # faster\nvariant=no-gating\n").unwrap();
        assert_eq!(pairs, vec![("lr".into(), "0.001".into()), ("variant".into(), "no-gating".into())]);
        assert!(parse_pairs("lr 0.1").is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("learning_rate", "1"), Err(Error::Config(_))));
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        fs::write(&p, "lr=0.001\nbatch_size=8\n").unwrap();
        let mut c = RunConfig::load(Some(&p)).unwrap();
        c.set_opt("batch_size", &Some(4)).unwrap();
        c.set_opt::<usize>("patience", &None).unwrap();
        let t = c.train_config().unwrap();
        assert_eq!((t.lr, t.batch_size, t.patience), (0.001, 4, 3));
        fs::write(&p, "bogus=1\n").unwrap();
        assert!(RunConfig::load(Some(&p)).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.set("variant", "no-relpos").unwrap();
        c.normalize_variant().unwrap();
        assert_eq!(c.raw("n_pos"), "0");
        let pairs = parse_pairs(&c.to_text()).unwrap();
        let mut back = RunConfig::default();
        for (k, v) in pairs {
            back.set(&k, v).unwrap();
        }
        assert_eq!(back, c);
        assert_eq!(c.min_gap().unwrap(), 16);
    }

    #[test]
    fn model_config_validates() {
        let mut c = RunConfig::default();
        c.set("patch_len", "200").unwrap();
        assert!(matches!(c.model_config(1), Err(Error::Config(_))));
    }
}
