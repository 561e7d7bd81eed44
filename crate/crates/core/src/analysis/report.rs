//! Aligned two-column text for the diagnostic reports.

use super::{BoundCheck, GateReport, LagReport, ProxyFit};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

/// Left-aligned labels padded to a common width.
pub fn aligned(title: &str, rows: &[(String, String)]) -> String {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = format!("{title}\n");
    for (k, v) in rows {
        out.push_str(&format!("  {k:<width$}  {v}\n"));
    }
    out
}

/// Several labelled columns under shared row labels.
pub fn columns(labels: &[&str], headers: &[String], cells: &[Vec<String>]) -> String {
    let lw = labels.iter().map(|l| l.len()).max().unwrap_or(0);
    let cw: Vec<usize> = headers
        .iter()
        .enumerate()
        .map(|(j, h)| cells.iter().map(|r| r[j].len()).chain([h.len()]).max().unwrap_or(0))
        .collect();
    let mut out = format!("  {:<lw$}", "");
    for (h, w) in headers.iter().zip(&cw) {
        out.push_str(&format!("  {h:>w$}"));
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(cells) {
        out.push_str(&format!("  {l:<lw$}"));
        for (c, w) in row.iter().zip(&cw) {
            out.push_str(&format!("  {c:>w$}"));
        }
        out.push('\n');
    }
    out
}

pub trait TextReport {
    fn to_text(&self) -> String;
}

impl TextReport for LagReport {
    fn to_text(&self) -> String {
        aligned(
            "lag",
            &[
                ("tail_auc".into(), format!("{:.6}", self.tail_auc)),
                ("excess_auc".into(), format!("{:.6}", self.excess_auc)),
                ("baseline".into(), format!("{:.6}", self.baseline)),
                ("window".into(), self.window.to_string()),
                ("events".into(), self.event_count.to_string()),
            ],
        )
    }
}

/// Lag reports of several models side by side.
pub fn lag_side_by_side(names: &[String], reports: &[LagReport]) -> String {
    let labels = ["tail_auc", "excess_auc", "baseline", "window", "events"];
    let cells: Vec<Vec<String>> = vec![
        reports.iter().map(|r| format!("{:.6}", r.tail_auc)).collect(),
        reports.iter().map(|r| format!("{:.6}", r.excess_auc)).collect(),
        reports.iter().map(|r| format!("{:.6}", r.baseline)).collect(),
        reports.iter().map(|r| r.window.to_string()).collect(),
        reports.iter().map(|r| r.event_count.to_string()).collect(),
    ];
    columns(&labels, names, &cells)
}

impl TextReport for ProxyFit {
    fn to_text(&self) -> String {
        aligned(
            &format!("proxy {}", self.form),
            &[
                ("c".into(), format!("{:.6}", self.c)),
                ("rho".into(), format!("{:.6}", self.rho)),
                ("alpha".into(), format!("{:.6}", self.alpha)),
                ("beta".into(), format!("{:.6}", self.beta)),
                ("r2".into(), fmt_opt(self.r2)),
                ("rmse".into(), format!("{:.6}", self.rmse)),
                ("mae".into(), format!("{:.6}", self.mae)),
                ("condition".into(), format!("{:.3e}", self.condition)),
                ("n_train/n_test".into(), format!("{}/{}", self.n_train, self.n_test)),
            ],
        )
    }
}

impl TextReport for BoundCheck {
    fn to_text(&self) -> String {
        aligned(
            "bound",
            &[
                ("rho".into(), format!("{}", self.rho)),
                ("eps_bar".into(), format!("{}", self.eps_bar)),
                ("horizon".into(), self.horizon.to_string()),
                ("burn_in".into(), self.burn_in.to_string()),
                ("observed_sup".into(), format!("{:.12}", self.observed_sup)),
                ("bound".into(), format!("{:.12}", self.bound)),
                ("holds".into(), self.holds.to_string()),
            ],
        )
    }
}

impl TextReport for GateReport {
    fn to_text(&self) -> String {
        aligned(
            "gate",
            &[
                ("mean_gate_event".into(), fmt_opt(self.mean_gate_event)),
                ("mean_gate_non_event".into(), fmt_opt(self.mean_gate_non_event)),
                ("retained_event".into(), fmt_opt(self.retained_event)),
                ("retained_non_event".into(), fmt_opt(self.retained_non_event)),
                ("pairs".into(), format!("{}/{}", self.pairs_event_higher, self.pairs)),
                ("fraction_event_higher".into(), fmt_opt(self.fraction_event_higher)),
                ("segments".into(), self.segments.to_string()),
            ],
        )
    }
}
