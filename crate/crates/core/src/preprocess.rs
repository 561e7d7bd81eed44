//! Reversible per-window normalization and first-order differencing.

use serde::{Deserialize, Serialize};

use crate::diffcore::{NumArray, Tape, Var};
use crate::error::{Error, Result};

/// Stability term added to the per-channel standard deviation.
pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one window, `std = sqrt(var) + NORM_EPS`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Recorded normalization of `[rows, T]` data.
#[derive(Debug, Clone, Copy)]
pub struct Normalized<'t> {
    pub x: Var<'t>,
    /// `[rows, 1]`
    pub mean: Var<'t>,
    /// `[rows, 1]`
    pub std: Var<'t>,
}

/// Normalizes every row of `x` over its last axis.
pub fn normalize_rows(x: Var<'_>) -> Result<Normalized<'_>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!("expected [rows, T], got {:?}", shape)));
    }
    if shape[1] < 2 {
        return Err(Error::Dimension(format!("normalization needs T >= 2, got {}", shape[1])));
    }
    let (mean, var) = x.mean_var(1)?;
    let std = var.sqrt().add_scalar(NORM_EPS);
    let xn = x.sub(mean)?.div(std)?;
    Ok(Normalized { x: xn, mean, std })
}

/// Inverse of [`normalize_rows`] for `[rows, H]` outputs.
pub fn denormalize_rows<'t>(y: Var<'t>, mean: Var<'t>, std: Var<'t>) -> Result<Var<'t>> {
    y.mul(std)?.add(mean)
}

/// Normalizes a `[V, T]` window per channel.
pub fn normalize(window: &NumArray) -> Result<(NumArray, NormStats)> {
    if !window.is_finite() {
        return Err(Error::Data("window contains non-finite values".into()));
    }
    let tape = Tape::new();
    let n = normalize_rows(tape.constant(window.clone()))?;
    let stats = NormStats {
        mean: n.mean.to_array().into_values(),
        std: n.std.to_array().into_values(),
    };
    Ok((n.x.to_array(), stats))
}

/// Maps a normalized `[V, H]` forecast back to the window's scale.
pub fn denormalize(y: &NumArray, stats: &NormStats) -> Result<NumArray> {
    if y.ndim() != 2 || y.shape()[0] != stats.channels() || stats.std.len() != stats.channels() {
        return Err(Error::Dimension(format!(
            "forecast shape {:?} does not match {} channels",
            y.shape(),
            stats.channels()
        )));
    }
    let h = y.shape()[1];
    let values = y
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| v * stats.std[i / h] + stats.mean[i / h])
        .collect();
    NumArray::new(y.shape().to_vec(), values)
}

/// First difference along time with a zero first step.
pub fn difference(x: &NumArray) -> Result<NumArray> {
    let tape = Tape::new();
    Ok(tape.constant(x.clone()).diff_last()?.to_array())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arr(shape: &[usize], v: &[f64]) -> NumArray {
        NumArray::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let (x, stats) = normalize(&arr(&[1, 4], &[5.0; 4])).unwrap();
        assert_eq!(x.values(), &[0.0; 4]);
        assert_eq!(stats.mean, vec![5.0]);
        assert_eq!(stats.std, vec![NORM_EPS]);
    }

    #[test]
    fn hand_computed_window() {
        let (x, stats) = normalize(&arr(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let std = (2.0f64 / 3.0).sqrt() + 1e-5;
        assert!((stats.mean[0] - 2.0).abs() < 1e-15);
        assert!((stats.std[0] - std).abs() < 1e-15);
        assert!((x.values()[0] + 1.0 / std).abs() < 1e-12);
        assert_eq!(x.values()[1], 0.0);
        assert!((x.values()[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_finite_and_short_windows() {
        assert!(matches!(normalize(&arr(&[1, 3], &[1.0, f64::NAN, 3.0])), Err(Error::Data(_))));
        assert!(matches!(normalize(&arr(&[2, 1], &[1.0, 2.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn denormalize_affine() {
        let stats = NormStats {
            mean: vec![2.0, -1.0],
            std: vec![3.0, 0.5],
        };
        let y = denormalize(&arr(&[2, 2], &[0.0, 1.0, 0.0, 1.0]), &stats).unwrap();
        assert_eq!(y.values(), &[2.0, 5.0, -1.0, -0.5]);
        let bad = NumArray::zeros(&[3, 2]);
        assert!(matches!(denormalize(&bad, &stats), Err(Error::Dimension(_))));
    }

    #[test]
    fn difference_cases() {
        let d = difference(&arr(&[1, 3], &[1.0, 3.0, 6.0])).unwrap();
        assert_eq!(d.values(), &[0.0, 2.0, 3.0]);
        let c = difference(&arr(&[2, 4], &[7.0; 8])).unwrap();
        assert_eq!(c.values(), &[0.0; 8]);
    }

    proptest! {
        #[test]
        fn round_trip_within_1e9(v in 1usize..5, t in 2usize..40, seed in any::<u64>(), scale in 0.01f64..1e3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let vals: Vec<f64> = (0..v * t).map(|_| rng.gen_range(-1.0..1.0) * scale + scale).collect();
            let w = arr(&[v, t], &vals);
            let (x, stats) = normalize(&w).unwrap();
            let back = denormalize(&x, &stats).unwrap();
            for (a, b) in back.values().iter().zip(w.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            // normalized moments
            for c in 0..v {
                let row = x.row(c);
                let m = row.iter().sum::<f64>() / t as f64;
                let var = row.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / t as f64;
                prop_assert!(m.abs() < 1e-12);
                if stats.std[c] > 1e-3 {
                    prop_assert!((var - 1.0).abs() < 2.0 * NORM_EPS / stats.std[c].min(1.0) + 1e-9);
                }
            }
        }

        #[test]
        fn difference_telescopes(vals in proptest::collection::vec(-100.0f64..100.0, 1..50)) {
            let x = arr(&[1, vals.len()], &vals);
            let d = difference(&x).unwrap();
            prop_assert_eq!(d.values()[0], 0.0);
            let mut acc = vals[0];
            for (t, dv) in d.values().iter().enumerate().skip(1) {
                acc += dv;
                prop_assert!((acc - vals[t]).abs() < 1e-9);
            }
        }
    }
}
