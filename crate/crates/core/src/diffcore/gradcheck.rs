use super::{NumArray, Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing analytic gradients to central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub per_param: Vec<f64>,
    pub checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(f: &F, params: &[NumArray]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&tape, &vars)?;
    let v = out.item();
    if !v.is_finite() {
        return Err(Error::Numeric(format!("objective evaluated to {}", v)));
    }
    Ok(v)
}

/// Checks every entry of `params` against central differences with `step`.
///
/// `f` must build the same scalar objective from the given variables each time.
pub fn grad_check<F>(params: &[NumArray], step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(step > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {}", step)));
    }
    let analytic: Vec<Vec<f64>> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p)).collect();
        let out = f(&tape, &vars)?;
        if !out.item().is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {}", out.item())));
        }
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.wrt_or_zero(*v)).collect()
    };
    let mut work: Vec<NumArray> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        per_param: vec![0.0; params.len()],
        checked: 0,
    };
    for pi in 0..params.len() {
        for ei in 0..params[pi].len() {
            let orig = params[pi].values()[ei];
            work[pi].values_mut()[ei] = orig + step;
            let plus = eval(&f, &work)?;
            work[pi].values_mut()[ei] = orig - step;
            let minus = eval(&f, &work)?;
            work[pi].values_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = rel_error(analytic[pi][ei], numeric);
            report.checked += 1;
            if err > report.per_param[pi] {
                report.per_param[pi] = err;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (pi, ei);
            }
        }
    }
    Ok(report)
}
