//! CSV ingestion, chronological splits and sliding windows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::NumArray;
use crate::error::{Error, Result};

/// Channels stored row-wise as `[V, N]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeries {
    pub channels: Vec<String>,
    pub values: NumArray,
    pub timestamps: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[V, L]`
    pub input: NumArray,
    /// `[V, H]`, starting at `origin + L`
    pub target: NumArray,
    pub origin: usize,
}

impl MultiSeries {
    pub fn new(channels: Vec<String>, values: NumArray, timestamps: Option<Vec<String>>) -> Result<Self> {
        if values.ndim() != 2 || values.shape()[0] != channels.len() {
            return Err(Error::Dimension(format!(
                "{} channel names for values of shape {:?}",
                channels.len(),
                values.shape()
            )));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != values.shape()[1] {
                return Err(Error::Dimension(format!(
                    "{} timestamps for {} steps",
                    ts.len(),
                    values.shape()[1]
                )));
            }
        }
        if !values.is_finite() {
            return Err(Error::Data("series contains non-finite values".into()));
        }
        Ok(Self { channels, values, timestamps })
    }

    pub fn n_vars(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, v: usize) -> &[f64] {
        self.values.row(v)
    }

    /// Steps `[start, end)` of every channel.
    pub fn slice(&self, start: usize, end: usize) -> MultiSeries {
        let n = self.len();
        assert!(start <= end && end <= n, "slice {start}..{end} out of 0..{n}");
        let mut out = Vec::with_capacity(self.n_vars() * (end - start));
        for v in 0..self.n_vars() {
            out.extend_from_slice(&self.channel(v)[start..end]);
        }
        MultiSeries {
            channels: self.channels.clone(),
            values: NumArray::new(vec![self.n_vars(), end - start], out).expect("slice shape"),
            timestamps: self.timestamps.as_ref().map(|t| t[start..end].to_vec()),
        }
    }

    /// Writes the series with a header row; the `date` column appears only
    /// when timestamps are present.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<&str> = Vec::new();
        if self.timestamps.is_some() {
            header.push("date");
        }
        header.extend(self.channels.iter().map(String::as_str));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec: Vec<String> = Vec::with_capacity(header.len());
            if let Some(ts) = &self.timestamps {
                rec.push(ts[t].clone());
            }
            for v in 0..self.n_vars() {
                rec.push(format!("{:?}", self.values.at2(v, t)));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {:?}", path.display(), other)),
    }
}

/// Reads a header-first CSV. A leading column named `date` is kept as
/// timestamps; every other column must be numeric in every row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<MultiSeries> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let has_date = header[0].eq_ignore_ascii_case("date");
    let channels: Vec<String> = header[usize::from(has_date)..].to_vec();
    if channels.is_empty() {
        return Err(Error::Data(format!("{}: no numeric columns", path.display())));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
    let mut stamps = Vec::new();
    let mut first_bad: Option<String> = None;
    let mut bad_rows = 0usize;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let mut problem = None;
        if rec.len() != header.len() {
            problem = Some(format!("row {row}: {} fields, header has {}", rec.len(), header.len()));
        } else {
            for (c, name) in channels.iter().enumerate() {
                let cell = rec[c + usize::from(has_date)].trim();
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => columns[c].push(v),
                    _ => {
                        let what = if cell.is_empty() { "blank cell".to_string() } else { format!("unparsable cell '{cell}'") };
                        problem = Some(format!("row {row}, column '{name}': {what}"));
                        break;
                    }
                }
            }
        }
        match problem {
            Some(msg) => {
                bad_rows += 1;
                first_bad.get_or_insert(msg);
                // keep columns aligned by dropping the partial row
                let keep = stamps.len();
                for col in &mut columns {
                    col.truncate(keep);
                }
            }
            None => {
                if has_date {
                    stamps.push(rec[0].trim().to_string());
                } else {
                    stamps.push(String::new());
                }
            }
        }
    }
    if let Some(msg) = first_bad {
        return Err(Error::Data(format!(
            "{}: {msg} ({bad_rows} row{} rejected)",
            path.display(),
            if bad_rows == 1 { "" } else { "s" }
        )));
    }
    let n = stamps.len();
    if n == 0 {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let values = NumArray::new(vec![channels.len(), n], columns.concat())?;
    MultiSeries::new(channels, values, has_date.then_some(stamps))
}

/// Chronological train/val/test split. Every segment must hold at least
/// `min_len` steps.
pub fn split(
    series: &MultiSeries,
    train_frac: f64,
    val_frac: f64,
    min_len: usize,
) -> Result<(MultiSeries, MultiSeries, MultiSeries)> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::Config(format!(
            "split fractions {train_frac}/{val_frac} must be positive with sum < 1"
        )));
    }
    let n = series.len();
    let n_train = (n as f64 * train_frac).round() as usize;
    let n_val = (n as f64 * val_frac).round() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    for (name, len) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if len < min_len {
            return Err(Error::Config(format!(
                "{name} segment has {len} steps, fewer than the {min_len} a window needs"
            )));
        }
    }
    Ok((
        series.slice(0, n_train),
        series.slice(n_train, n_train + n_val),
        series.slice(n_train + n_val, n),
    ))
}

pub fn window_count(n: usize, lookback: usize, horizon: usize, stride: usize) -> usize {
    if stride == 0 || n < lookback + horizon {
        0
    } else {
        (n - lookback - horizon) / stride + 1
    }
}

/// Windows at origins `0, stride, …` up to `N - L - H`, last partial stride kept.
pub fn make_windows(series: &MultiSeries, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if stride == 0 || lookback == 0 || horizon == 0 {
        return Err(Error::Config("lookback, horizon and stride must be positive".into()));
    }
    let n = series.len();
    if n < lookback + horizon {
        return Err(Error::Config(format!(
            "series of {n} steps is shorter than lookback {lookback} + horizon {horizon}"
        )));
    }
    let count = window_count(n, lookback, horizon, stride);
    let v = series.n_vars();
    let grab = |start: usize, len: usize| {
        let mut out = Vec::with_capacity(v * len);
        for c in 0..v {
            out.extend_from_slice(&series.channel(c)[start..start + len]);
        }
        NumArray::new(vec![v, len], out).expect("window shape")
    };
    Ok((0..count)
        .map(|i| {
            let origin = i * stride;
            WindowSample {
                input: grab(origin, lookback),
                target: grab(origin + lookback, horizon),
                origin,
            }
        })
        .collect())
}
