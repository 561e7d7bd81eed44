//! Simulation of the prediction-error recursion `e_t = rho_t (e_{t-1} + eps_t)`
//! against its geometric worst-case bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometric-tail level that ends the burn-in.
pub const BURN_IN_LEVEL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Disturbance {
    /// `eps_t = eps_bar * sign(e_{t-1})`, pushing the error outward every step.
    Adversarial,
    /// `eps_t` uniform on `[-eps_bar, eps_bar]`.
    Random { seed: u64 },
    /// `eps_t = eps_bar`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RhoPath {
    Constant { rho: f64 },
    /// `rho_t` uniform on `[-rho_max, rho_max]`.
    Varying { rho_max: f64, seed: u64 },
}

impl RhoPath {
    fn magnitude(&self) -> f64 {
        match *self {
            RhoPath::Constant { rho } => rho.abs(),
            RhoPath::Varying { rho_max, .. } => rho_max.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    /// `|rho|`, or `rho_max` for a varying path.
    pub rho: f64,
    pub eps_bar: f64,
    pub horizon: usize,
    pub burn_in: usize,
    pub observed_sup: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Smallest `K` with `|rho|^K < BURN_IN_LEVEL`.
pub fn burn_in(rho: f64) -> usize {
    let r = rho.abs();
    if r == 0.0 {
        return 0;
    }
    let mut k = (BURN_IN_LEVEL.ln() / r.ln()).floor().max(0.0) as usize;
    while r.powi(k as i32) >= BURN_IN_LEVEL {
        k += 1;
    }
    k
}

pub fn bound_sim(path: RhoPath, eps_bar: f64, horizon: usize, disturbance: Disturbance) -> Result<BoundCheck> {
    let r = path.magnitude();
    if !(r < 1.0) {
        return Err(Error::Domain(format!("|rho| must be below 1, got {r}")));
    }
    if !(eps_bar >= 0.0 && eps_bar.is_finite()) {
        return Err(Error::Domain(format!("eps_bar must be finite and >= 0, got {eps_bar}")));
    }
    let k = burn_in(r);
    if horizon <= k {
        return Err(Error::Config(format!("horizon {horizon} does not exceed the burn-in of {k} steps")));
    }
    let mut rho_rng = match path {
        RhoPath::Varying { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        RhoPath::Constant { .. } => None,
    };
    let mut eps_rng = match disturbance {
        Disturbance::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9))),
        _ => None,
    };
    let mut e = 0.0f64;
    let mut sup = 0.0f64;
    for t in 1..=horizon {
        let rho = match (path, rho_rng.as_mut()) {
            (RhoPath::Varying { rho_max, .. }, Some(rng)) => rng.gen_range(-rho_max..=rho_max),
            (RhoPath::Constant { rho }, _) => rho,
            _ => unreachable!(),
        };
        let eps = match (disturbance, eps_rng.as_mut()) {
            (Disturbance::Adversarial, _) => if e >= 0.0 { eps_bar } else { -eps_bar },
            (Disturbance::Constant, _) => eps_bar,
            (Disturbance::Random { .. }, Some(rng)) => rng.gen_range(-eps_bar..=eps_bar),
            _ => unreachable!(),
        };
        e = rho * e + rho * eps;
        if t > k {
            sup = sup.max(e.abs());
        }
    }
    let bound = r / (1.0 - r) * eps_bar;
    Ok(BoundCheck { rho: r, eps_bar, horizon, burn_in: k, observed_sup: sup, bound, holds: sup <= bound + 1e-12 })
}
