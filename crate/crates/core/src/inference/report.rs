//! Accuracy report with in-domain/out-of-domain averages.

use serde::Serialize;

use super::InferenceError;

/// Rounds half-up to two decimals. A relative 1e-9 nudge absorbs binary
/// representation error, so 71.545 displays as 71.55.
pub fn round2(x: f64) -> f64 {
    let scaled = x * 100.0;
    let nudge = 1e-9 * scaled.abs().max(1.0);
    (scaled + 0.5 + nudge).floor() / 100.0
}

pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round2(x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    rows: Vec<(String, f64)>,
    ood: Vec<String>,
}

/// Builds a report; averages are always derived from `rows`.
pub fn aggregate_report(
    rows: &[(String, f64)],
    ood_names: &[String],
) -> Result<EvalReport, InferenceError> {
    if rows.is_empty() {
        return Err(InferenceError::NoSamples);
    }
    for (i, (name, _)) in rows.iter().enumerate() {
        if rows[..i].iter().any(|(n, _)| n == name) {
            return Err(InferenceError::DuplicateDataset(name.clone()));
        }
    }
    for name in ood_names {
        if !rows.iter().any(|(n, _)| n == name) {
            return Err(InferenceError::UnknownDatasetName(name.clone()));
        }
    }
    let mut ood: Vec<String> = Vec::new();
    for name in ood_names {
        if !ood.contains(name) {
            ood.push(name.clone());
        }
    }
    Ok(EvalReport {
        method: "model".into(),
        rows: rows.to_vec(),
        ood,
    })
}

#[derive(Serialize)]
struct Row<'a> {
    name: &'a str,
    top1: f64,
    ood: bool,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    method: &'a str,
    datasets: Vec<Row<'a>>,
    ood_average: Option<f64>,
    overall_average: f64,
}

impl EvalReport {
    pub fn with_method(mut self, method: impl Into<String>) -> Self {
        self.method = method.into();
        self
    }

    pub fn rows(&self) -> &[(String, f64)] {
        &self.rows
    }

    pub fn ood_names(&self) -> &[String] {
        &self.ood
    }

    fn is_ood(&self, name: &str) -> bool {
        self.ood.iter().any(|n| n == name)
    }

    /// Mean over the out-of-domain rows, if any were named.
    pub fn ood_average(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|(n, _)| self.is_ood(n))
            .map(|(_, v)| *v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn overall_average(&self) -> f64 {
        self.rows.iter().map(|(_, v)| v).sum::<f64>() / self.rows.len() as f64
    }

    /// JSON with fixed key order; numbers rounded for display.
    pub fn to_json(&self) -> String {
        let doc = ReportJson {
            method: &self.method,
            datasets: self
                .rows
                .iter()
                .map(|(n, v)| Row {
                    name: n,
                    top1: round2(*v),
                    ood: self.is_ood(n),
                })
                .collect(),
            ood_average: self.ood_average().map(round2),
            overall_average: round2(self.overall_average()),
        };
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }

    /// One header line and one value line: method, in-domain datasets,
    /// out-of-domain datasets, then the averages.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, String)> = vec![("Method".into(), self.method.clone())];
        let in_domain = self.rows.iter().filter(|(n, _)| !self.is_ood(n));
        let out_domain = self.rows.iter().filter(|(n, _)| self.is_ood(n));
        for (name, v) in in_domain.chain(out_domain) {
            cols.push((name.clone(), fmt2(*v)));
        }
        if let Some(avg) = self.ood_average() {
            cols.push(("OOD Average".into(), fmt2(avg)));
        }
        cols.push(("Average".into(), fmt2(self.overall_average())));

        let widths: Vec<usize> = cols.iter().map(|(h, v)| h.len().max(v.len())).collect();
        let line = |pick: fn(&(String, String)) -> &String| {
            cols.iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{:<w$}", pick(c), w = *w)
                    } else {
                        format!("{:>w$}", pick(c), w = *w)
                    }
                })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!("{}\n{}\n", line(|c| &c.0), line(|c| &c.1))
    }
}
