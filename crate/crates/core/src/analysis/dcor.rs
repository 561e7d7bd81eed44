//! Distance correlation between two samples of row vectors.

use crate::diffcore::NumArray;
use crate::error::{Error, Result};

fn as_rows(a: &NumArray) -> Result<(usize, usize)> {
    match a.shape() {
        [n] => Ok((*n, 1)),
        [n, p] => Ok((*n, *p)),
        s => Err(Error::Dimension(format!("expected [n] or [n, p], got {s:?}"))),
    }
}

/// Double-centered pairwise Euclidean distances, row-major `n × n`.
fn centered_distances(a: &NumArray) -> Result<Vec<f64>> {
    let (n, p) = as_rows(a)?;
    let v = a.values();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (0..p).map(|k| (v[i * p + k] - v[j * p + k]).powi(2)).sum();
            d[i * n + j] = s.sqrt();
            d[j * n + i] = d[i * n + j];
        }
    }
    let row_mean: Vec<f64> = (0..n).map(|i| d[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    for i in 0..n {
        for j in 0..n {
            // distance matrix is symmetric, so column means equal row means
            d[i * n + j] += grand - row_mean[i] - row_mean[j];
        }
    }
    Ok(d)
}

/// Sample distance correlation in `[0, 1]`; 0 when either sample has zero
/// distance variance.
pub fn dcor(a: &NumArray, b: &NumArray) -> Result<f64> {
    let (na, _) = as_rows(a)?;
    let (nb, _) = as_rows(b)?;
    if na != nb {
        return Err(Error::Dimension(format!("{na} rows against {nb} rows")));
    }
    if na < 4 {
        return Err(Error::Dimension(format!("distance correlation needs n >= 4, got {na}")));
    }
    let da = centered_distances(a)?;
    let db = centered_distances(b)?;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let cov = dot(&da, &db);
    let va = dot(&da, &da);
    let vb = dot(&db, &db);
    if va <= 0.0 || vb <= 0.0 {
        return Ok(0.0);
    }
    Ok((cov.max(0.0) / (va * vb).sqrt()).sqrt().min(1.0))
}
