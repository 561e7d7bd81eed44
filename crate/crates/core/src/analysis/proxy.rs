//! Reduced-form regressions of successive predictions on the previous
//! prediction and the window's entering/leaving inputs.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular-value ratio below which a design is treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyForm {
    /// `y ~ c + rho * y_prev`
    InertiaOnly,
    /// `y ~ c + alpha * x_new + beta * x_old`
    UpdateOnly,
    /// `y ~ c + rho * y_prev + alpha * x_new + beta * x_old`
    Full,
}

impl ProxyForm {
    pub const ALL: [ProxyForm; 3] = [ProxyForm::InertiaOnly, ProxyForm::UpdateOnly, ProxyForm::Full];

    pub fn name(self) -> &'static str {
        match self {
            ProxyForm::InertiaOnly => "inertia_only",
            ProxyForm::UpdateOnly => "update_only",
            ProxyForm::Full => "full",
        }
    }

    fn row(self, s: &ProxySample) -> Vec<f64> {
        match self {
            ProxyForm::InertiaOnly => vec![1.0, s.y_prev],
            ProxyForm::UpdateOnly => vec![1.0, s.x_new, s.x_old],
            ProxyForm::Full => vec![1.0, s.y_prev, s.x_new, s.x_old],
        }
    }
}

impl fmt::Display for ProxyForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProxyForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().replace('-', "_");
        ProxyForm::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown proxy form '{s}'")))
    }
}

/// One aligned tuple; `group` identifies the event neighborhood it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxySample {
    pub y: f64,
    pub y_prev: f64,
    pub x_new: f64,
    pub x_old: f64,
    pub group: usize,
}

/// Tuples `t = 1..n` from aligned per-step sequences, all in one group.
pub fn samples_from_series(preds: &[f64], x_new: &[f64], x_old: &[f64]) -> Result<Vec<ProxySample>> {
    if preds.len() != x_new.len() || preds.len() != x_old.len() {
        return Err(Error::Dimension(format!(
            "{} predictions, {} entering and {} leaving inputs",
            preds.len(),
            x_new.len(),
            x_old.len()
        )));
    }
    Ok((1..preds.len())
        .map(|t| ProxySample { y: preds[t], y_prev: preds[t - 1], x_new: x_new[t], x_old: x_old[t], group: 0 })
        .collect())
}

/// Keeps tuples whose step lies in `[e, e + window)` of some event, grouped
/// by event. `step_of(i)` maps tuple index to its step on the event axis.
pub fn event_neighborhoods(
    samples: &[ProxySample],
    step_of: impl Fn(usize) -> usize,
    events: &[usize],
    window: usize,
) -> Vec<ProxySample> {
    let mut out = Vec::new();
    for (g, &e) in events.iter().enumerate() {
        for (i, s) in samples.iter().enumerate() {
            let t = step_of(i);
            if t >= e && t < e + window {
                out.push(ProxySample { group: g, ..*s });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyFit {
    pub form: ProxyForm,
    pub c: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Held-out R²; `None` when the held-out target has zero variance.
    pub r2: Option<f64>,
    pub rmse: f64,
    pub mae: f64,
    pub condition: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Constant training target: coefficients are the minimum-norm solution.
    pub degenerate: bool,
}

/// Train/test split by whole groups in order of first appearance; with a
/// single group the tuples themselves are split chronologically.
fn split_samples(samples: &[ProxySample], train_frac: f64) -> (Vec<ProxySample>, Vec<ProxySample>) {
    let mut groups: Vec<usize> = Vec::new();
    for s in samples {
        if !groups.contains(&s.group) {
            groups.push(s.group);
        }
    }
    if groups.len() >= 2 {
        let k = ((groups.len() as f64 * train_frac).round() as usize).clamp(1, groups.len() - 1);
        let train_groups = &groups[..k];
        samples.iter().partition(|s| train_groups.contains(&s.group))
    } else {
        let k = ((samples.len() as f64 * train_frac).round() as usize).clamp(1, samples.len().saturating_sub(1));
        (samples[..k].to_vec(), samples[k..].to_vec())
    }
}

/// QR solution and a condition estimate; `None` when the design is rank
/// deficient.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(Option<DVector<f64>>, f64)> {
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..r.ncols()).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let eig = (x.transpose() * x).symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let condition = if lmin > 0.0 { (lmax / lmin).sqrt() } else { f64::INFINITY };
    if dmax == 0.0 || dmin / dmax < RANK_TOL {
        return Ok((None, condition.max(if dmin > 0.0 { dmax / dmin } else { f64::INFINITY })));
    }
    let thin = x.clone().qr();
    let beta = thin
        .r()
        .solve_upper_triangular(&(thin.q().transpose() * y))
        .ok_or_else(|| Error::Fit { message: "triangular solve failed".into(), condition })?;
    Ok((Some(beta), condition))
}

/// Minimum-norm least squares through the eigenbasis of the normal matrix.
fn min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let eig = (x.transpose() * x).symmetric_eigen();
    let rhs = x.transpose() * y;
    let lmax = eig.eigenvalues.max();
    let mut beta = DVector::zeros(x.ncols());
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > lmax * RANK_TOL {
            let v = eig.eigenvectors.column(i);
            beta += v * (v.dot(&rhs) / l);
        }
    }
    beta
}

pub fn fit_proxy(samples: &[ProxySample], form: ProxyForm, train_frac: f64) -> Result<ProxyFit> {
    if samples.len() < 10 {
        return Err(Error::Data(format!("proxy fit needs at least 10 tuples, got {}", samples.len())));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let (train, test) = split_samples(samples, train_frac);
    let p = form.row(&train[0]).len();
    if train.len() < p {
        return Err(Error::Data(format!("{} training tuples for {p} coefficients", train.len())));
    }
    let x = DMatrix::from_fn(train.len(), p, |i, j| form.row(&train[i])[j]);
    let y = DVector::from_iterator(train.len(), train.iter().map(|s| s.y));

    let (beta, condition) = least_squares(&x, &y)?;
    let y0 = train[0].y;
    let constant_target = train.iter().all(|s| s.y == y0);
    let beta = match beta {
        Some(b) => b,
        None if constant_target => min_norm(&x, &y),
        None => {
            return Err(Error::Fit {
                message: format!("{} design matrix is rank deficient", form.name()),
                condition,
            })
        }
    };
    let coef = |name: &str| -> f64 {
        let idx = match (form, name) {
            (_, "c") => Some(0),
            (ProxyForm::InertiaOnly, "rho") | (ProxyForm::Full, "rho") => Some(1),
            (ProxyForm::UpdateOnly, "alpha") => Some(1),
            (ProxyForm::UpdateOnly, "beta") => Some(2),
            (ProxyForm::Full, "alpha") => Some(2),
            (ProxyForm::Full, "beta") => Some(3),
            _ => None,
        };
        idx.map_or(0.0, |i| beta[i])
    };

    let eval = if test.is_empty() { &train } else { &test };
    let preds: Vec<f64> = eval
        .iter()
        .map(|s| form.row(s).iter().zip(beta.iter()).map(|(a, b)| a * b).sum())
        .collect();
    let n = eval.len() as f64;
    let mean = eval.iter().map(|s| s.y).sum::<f64>() / n;
    let ss_tot: f64 = eval.iter().map(|s| (s.y - mean).powi(2)).sum();
    let resid: Vec<f64> = eval.iter().zip(&preds).map(|(s, p)| s.y - p).collect();
    let ss_res: f64 = resid.iter().map(|r| r * r).sum();
    Ok(ProxyFit {
        form,
        c: coef("c"),
        rho: coef("rho"),
        alpha: coef("alpha"),
        beta: coef("beta"),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        rmse: (ss_res / n).sqrt(),
        mae: resid.iter().map(|r| r.abs()).sum::<f64>() / n,
        condition,
        n_train: train.len(),
        n_test: test.len(),
        degenerate: constant_target,
    })
}
