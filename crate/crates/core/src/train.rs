//! Mini-batch training with Adam, early stopping and forecast metrics.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowSample;
use crate::diffcore::{NumArray, Tape};
use crate::error::{Error, Result};
use crate::predictor::{forward_batch, stack_windows, ModelParams, Variant};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, one slot per parameter array.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// One bias-corrected Adam update. Nothing is modified when any gradient is
/// non-finite.
pub fn optimizer_step(params: &mut [&mut NumArray], grads: &[&[f64]], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!("{} arrays but {} gradients", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Dimension(format!("array {i}: {} values, {} gradients", p.len(), g.len())));
        }
        if let Some(j) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at array {i}, index {j}; step rejected")));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::Dimension("optimizer state does not match parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (k, w) in p.values_mut().iter_mut().enumerate() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch)
    }

    /// Columns `epoch,train_loss,val_mse,val_mae`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_record(["epoch", "train_loss", "val_mse", "val_mae"])?;
        for r in &self.epochs {
            w.write_record([
                r.epoch.to_string(),
                format!("{:?}", r.train_loss),
                format!("{:?}", r.val_mse),
                format!("{:?}", r.val_mae),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
    pub mape: f64,
}

/// Mean squared error of one batch in original units, with gradients
/// accumulated into `params`.
fn batch_loss_and_grads(params: &mut ModelParams, batch: &[&WindowSample]) -> Result<f64> {
    let c = params.config;
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let inputs: Vec<NumArray> = batch.iter().map(|s| s.input.clone()).collect();
    let x = tape.constant(stack_windows(&inputs, c.n_vars, c.lookback)?);
    let mut target = Vec::with_capacity(batch.len() * c.n_vars * c.horizon);
    for s in batch {
        if s.target.shape() != [c.n_vars, c.horizon] {
            return Err(Error::Dimension(format!(
                "target shape {:?}, model expects [{}, {}]",
                s.target.shape(),
                c.n_vars,
                c.horizon
            )));
        }
        target.extend_from_slice(s.target.values());
    }
    let y = tape.constant(NumArray::new(vec![batch.len(), c.n_vars, c.horizon], target)?);
    let pred = forward_batch(&vars, &c, x)?.forecast;
    let loss = pred.sub(y)?.square()?.mean();
    let value = loss.item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("training loss became {value}")));
    }
    let grads = tape.backward(loss)?;
    params.accumulate_grads(&vars, &grads)?;
    Ok(value)
}

fn apply_update(params: &mut ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    let grads: Vec<Vec<f64>> = params
        .named_arrays()
        .iter()
        .map(|(_, a)| a.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; a.len()]))
        .collect();
    let refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
    let mut arrays = params.arrays_mut();
    optimizer_step(&mut arrays, &refs, state, lr)?;
    params.zero_grad();
    Ok(())
}

/// Full-batch steps on a fixed sample set; returns the loss before each step.
pub fn fit_batch(params: &mut ModelParams, samples: &[WindowSample], lr: f64, steps: usize) -> Result<Vec<f64>> {
    let batch: Vec<&WindowSample> = samples.iter().collect();
    let mut state = AdamState::default();
    let mut losses = Vec::with_capacity(steps);
    params.zero_grad();
    for _ in 0..steps {
        losses.push(batch_loss_and_grads(params, &batch)?);
        apply_update(params, &mut state, lr)?;
    }
    Ok(losses)
}

/// Trains with seeded shuffling and early stopping on validation MSE.
/// Returns the parameters of the best validation epoch.
pub fn train(
    mut params: ModelParams,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut state = AdamState::default();
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0usize;
    params.zero_grad();

    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&WindowSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = batch_loss_and_grads(&mut params, &batch)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            apply_update(&mut params, &mut state, cfg.lr)
                .map_err(|e| Error::Numeric(format!("epoch {epoch}, batch {b}: {e}")))?;
            total += loss * chunk.len() as f64;
        }
        let val = evaluate(&params, val_set)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: total / train_set.len() as f64,
            val_mse: val.mse,
            val_mae: val.mae,
            wall_secs: start.elapsed().as_secs_f64(),
        });
        if !val.mse.is_finite() {
            return Err(Error::Numeric(format!("validation MSE became {} at epoch {epoch}", val.mse)));
        }
        if best.as_ref().is_none_or(|(m, _)| val.mse < *m) {
            best = Some((val.mse, params.clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    let (_, best_params) = best.expect("at least one epoch");
    Ok((best_params, history))
}

/// Forecasts for every sample, batched.
pub fn predict(params: &ModelParams, samples: &[WindowSample]) -> Result<Vec<NumArray>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        let inputs: Vec<NumArray> = chunk.iter().map(|s| s.input.clone()).collect();
        out.extend(params.forecast_batch(&inputs)?);
    }
    Ok(out)
}

/// Metrics of predictions against targets, averaged over samples, channels
/// and steps.
pub fn metrics(preds: &[NumArray], targets: &[NumArray]) -> Result<Metrics> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Dimension(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let (mut se, mut ae, mut ape, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (p, y) in preds.iter().zip(targets) {
        if p.shape() != y.shape() {
            return Err(Error::Dimension(format!("prediction {:?} vs target {:?}", p.shape(), y.shape())));
        }
        for (a, b) in p.values().iter().zip(y.values()) {
            let e = a - b;
            se += e * e;
            ae += e.abs();
            ape += e.abs() / b.abs().max(1e-8);
            n += 1;
        }
    }
    let n = n as f64;
    Ok(Metrics { mse: se / n, mae: ae / n, mape: ape / n * 100.0 })
}

pub fn evaluate(params: &ModelParams, samples: &[WindowSample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on zero samples".into()));
    }
    let preds = predict(params, samples)?;
    let targets: Vec<NumArray> = samples.iter().map(|s| s.target.clone()).collect();
    metrics(&preds, &targets)
}

pub fn write_metrics_json(m: &Metrics, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_string_pretty(m)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::data::make_windows;
    use crate::predictor::ModelConfig;
    use crate::synth::{gen_regime_switch, RegimeConfig};

    fn synth_samples(len: usize, l: usize, h: usize, stride: usize) -> Vec<WindowSample> {
        let s = gen_regime_switch(&RegimeConfig { length: len, min_dwell: 30, max_dwell: 60, ..RegimeConfig::default() })
            .unwrap();
        make_windows(&s.series, l, h, stride).unwrap()
    }

    fn tiny_model(seed: u64) -> ModelParams {
        let mut c = ModelConfig::new(1, 16, 4);
        c.patch_len = 4;
        c.hidden = 8;
        ModelParams::init(c, seed).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut a = NumArray::param(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = a.clone();
        let mut st = AdamState::default();
        optimizer_step(&mut [&mut a], &[&[0.0, 0.0, 0.0]], &mut st, 0.1).unwrap();
        assert_eq!(a.values(), before.values());
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.5, -7.0, 300.0] {
            let mut a = NumArray::param(vec![1], vec![2.0]).unwrap();
            let mut st = AdamState::default();
            optimizer_step(&mut [&mut a], &[&[g]], &mut st, 0.01).unwrap();
            let moved = a.values()[0] - 2.0;
            // closed form: lr * |g| / (|g| + eps)
            let expected = -0.01 * g / (g.abs() + ADAM_EPS);
            assert!((moved - expected).abs() < 1e-15, "g={g}");
            assert!((moved.abs() - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn nonfinite_gradient_rejected() {
        let mut a = NumArray::param(vec![2], vec![1.0, 1.0]).unwrap();
        let mut st = AdamState::default();
        let r = optimizer_step(&mut [&mut a], &[&[0.1, f64::NAN]], &mut st, 0.1);
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert_eq!(a.values(), &[1.0, 1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn matches_hand_rolled_adam() {
        let gs = [0.3, -0.1, 0.7, 0.7, -2.0];
        let mut a = NumArray::param(vec![1], vec![0.0]).unwrap();
        let mut st = AdamState::default();
        let (mut w, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (i, g) in gs.iter().enumerate() {
            optimizer_step(&mut [&mut a], &[&[*g]], &mut st, 0.05).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let t = (i + 1) as i32;
            w -= 0.05 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!((a.values()[0] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn metric_examples() {
        let y = vec![NumArray::new(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap()];
        let m = metrics(&y, &y).unwrap();
        assert_eq!((m.mse, m.mae, m.mape), (0.0, 0.0, 0.0));
        let shifted: Vec<NumArray> =
            y.iter().map(|a| NumArray::new(a.shape().to_vec(), a.values().iter().map(|v| v + 1.0).collect()).unwrap()).collect();
        let m = metrics(&shifted, &y).unwrap();
        assert_eq!((m.mse, m.mae), (1.0, 1.0));
    }

    #[test]
    fn metrics_match_two_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rand_arr = || NumArray::new(vec![3, 5], (0..15).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let preds: Vec<NumArray> = (0..5).map(|_| rand_arr()).collect();
        let targets: Vec<NumArray> = (0..5).map(|_| rand_arr()).collect();
        let m = metrics(&preds, &targets).unwrap();
        let (mut se, mut ae, mut ape) = (0.0, 0.0, 0.0);
        for s in 0..5 {
            for v in 0..3 {
                for t in 0..5 {
                    let e = preds[s].at2(v, t) - targets[s].at2(v, t);
                    se += e * e;
                    ae += e.abs();
                    ape += e.abs() / targets[s].at2(v, t).abs().max(1e-8);
                }
            }
        }
        assert!((m.mse - se / 75.0).abs() < 1e-12);
        assert!((m.mae - ae / 75.0).abs() < 1e-12);
        assert!((m.mape - ape / 75.0 * 100.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn first_step_opposes_gradient(g in prop::collection::vec(-5.0f64..5.0, 1..20)) {
            let mut a = NumArray::param(vec![g.len()], vec![0.0; g.len()]).unwrap();
            let mut st = AdamState::default();
            optimizer_step(&mut [&mut a], &[&g], &mut st, 1e-3).unwrap();
            for (w, gi) in a.values().iter().zip(&g) {
                if *gi != 0.0 {
                    prop_assert!(w.signum() == -gi.signum());
                }
            }
        }

        #[test]
        fn metrics_permutation_invariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut mk = || NumArray::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let preds: Vec<NumArray> = (0..6).map(|_| mk()).collect();
            let targets: Vec<NumArray> = (0..6).map(|_| mk()).collect();
            let m = metrics(&preds, &targets).unwrap();
            let mut idx: Vec<usize> = (0..6).collect();
            idx.shuffle(&mut rng);
            let pp: Vec<NumArray> = idx.iter().map(|&i| preds[i].clone()).collect();
            let tt: Vec<NumArray> = idx.iter().map(|&i| targets[i].clone()).collect();
            let m2 = metrics(&pp, &tt).unwrap();
            prop_assert!((m.mse - m2.mse).abs() < 1e-12 && (m.mae - m2.mae).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let s = synth_samples(300, 16, 4, 4);
        let (tr, va) = s.split_at(50);
        let cfg = TrainConfig { max_epochs: 3, lr: 1e-3, batch_size: 8, seed: 5, ..TrainConfig::default() };
        let (p1, h1) = train(tiny_model(1), tr, va, &cfg).unwrap();
        let (p2, h2) = train(tiny_model(1), tr, va, &cfg).unwrap();
        assert_eq!(p1, p2);
        let strip = |h: &TrainHistory| h.epochs.iter().map(|r| (r.train_loss, r.val_mse, r.val_mae)).collect::<Vec<_>>();
        assert_eq!(strip(&h1), strip(&h2));
        assert_eq!(h1.best_epoch, h2.best_epoch);
    }

    #[test]
    fn best_epoch_params_are_returned() {
        let s = synth_samples(300, 16, 4, 4);
        let (tr, va) = s.split_at(50);
        let cfg = TrainConfig { max_epochs: 6, lr: 3e-3, batch_size: 8, seed: 2, patience: 10, ..TrainConfig::default() };
        let (best, h) = train(tiny_model(3), tr, va, &cfg).unwrap();
        let rec = h.best().unwrap();
        assert_eq!(evaluate(&best, va).unwrap().mse, rec.val_mse);
        assert!(h.epochs.iter().all(|r| r.val_mse >= rec.val_mse));
    }

    #[test]
    fn patience_zero_stops_after_first_stale_epoch() {
        // a large lr makes validation stall quickly; ties and increases both count as stale
        let s = synth_samples(300, 16, 4, 4);
        let (tr, va) = s.split_at(50);
        let cfg = TrainConfig { max_epochs: 50, lr: 5e-2, batch_size: 4, seed: 9, patience: 0, ..TrainConfig::default() };
        let (_, h) = train(tiny_model(4), tr, va, &cfg).unwrap();
        let n = h.epochs.len();
        assert!(n < 50);
        // every epoch before the last improved on its predecessor
        for w in h.epochs[..n - 1].windows(2) {
            assert!(w[1].val_mse < w[0].val_mse);
        }
        assert!(h.epochs[n - 1].val_mse >= h.epochs[n - 2].val_mse);
        assert_eq!(h.best_epoch, n - 2);
    }

    #[test]
    fn divergence_is_reported() {
        let s = synth_samples(300, 16, 4, 4);
        let mut p = tiny_model(5);
        p.predictor.head_bias.values_mut()[0] = f64::INFINITY;
        let err = train(p, &s[..20], &s[20..30], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
    }

    #[test]
    fn small_batch_loss_decreases() {
        let s = synth_samples(300, 16, 4, 10);
        let mut p = tiny_model(6);
        let losses = fit_batch(&mut p, &s[..8], 1e-2, 200).unwrap();
        assert!(losses[199] < 0.1 * losses[0], "{} -> {}", losses[0], losses[199]);
    }

    #[test]
    fn history_csv_columns() {
        let dir = tempfile::tempdir().unwrap();
        let h = TrainHistory {
            epochs: vec![EpochRecord { epoch: 0, train_loss: 1.5, val_mse: 2.0, val_mae: 1.0, wall_secs: 0.1 }],
            best_epoch: 0,
        };
        let p = dir.path().join("h.csv");
        h.write_csv(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "epoch,train_loss,val_mse,val_mae\n0,1.5,2.0,1.0\n");
    }
}
