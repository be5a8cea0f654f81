use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::Write;

use crate::data::fmt_f64;
use crate::error::Result;
use crate::metrics::BenchmarkResult;

/// Rows of benchmark results written as one CSV with a column per error key.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ledger {
    pub rows: Vec<BenchmarkResult>,
}

const LEAD: [&str; 15] = [
    "model",
    "approach",
    "drift_method",
    "diffusion_method",
    "diffusion_mode",
    "paths",
    "eps",
    "lambda_f",
    "lambda_g",
    "seed",
    "status",
    "drift_support_exact",
    "cov_support_exact",
    "max_drift_error",
    "max_cov_error",
];

const TAIL: [&str; 5] = ["rmse_full", "rmse_drift", "rmse_diffusion", "note", "cpu_seconds"];

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Largest error over keys starting with `prefix`.
pub fn max_error(r: &BenchmarkResult, prefix: char) -> Option<f64> {
    r.errors
        .iter()
        .filter(|(k, _)| k.starts_with(prefix))
        .map(|(_, v)| *v)
        .reduce(f64::max)
}

impl Ledger {
    pub fn new(rows: Vec<BenchmarkResult>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: Ledger) {
        self.rows.extend(other.rows);
    }

    /// Error keys over all rows, sorted.
    pub fn error_keys(&self) -> Vec<String> {
        let keys: BTreeSet<&String> = self.rows.iter().flat_map(|r| r.errors.keys()).collect();
        keys.into_iter().cloned().collect()
    }

    pub fn header(&self) -> Vec<String> {
        LEAD.iter()
            .map(|s| s.to_string())
            .chain(self.error_keys())
            .chain(TAIL.iter().map(|s| s.to_string()))
            .collect()
    }

    fn record(&self, r: &BenchmarkResult, keys: &[String]) -> Vec<String> {
        let flag = |f: fn(&crate::metrics::SupportCheck) -> bool| r.support.as_ref().map(|s| f(s).to_string()).unwrap_or_default();
        let mut rec = vec![
            r.model.clone(),
            r.approach.clone(),
            r.drift_method.clone(),
            r.diffusion_method.clone(),
            r.diffusion_mode.clone(),
            r.paths.to_string(),
            fmt_f64(r.eps),
            fmt_f64(r.lambda_f),
            fmt_f64(r.lambda_g),
            r.seed.to_string(),
            r.status.clone(),
            flag(|s| s.drift_exact),
            flag(|s| s.cov_exact),
            opt(max_error(r, 'f')),
            opt(max_error(r, 'C')),
        ];
        rec.extend(keys.iter().map(|k| opt(r.errors.get(k).copied())));
        rec.extend([
            opt(r.rmse_full),
            opt(r.rmse_drift),
            opt(r.rmse_diffusion),
            r.note.clone(),
            fmt_f64(r.cpu_seconds),
        ]);
        rec
    }

    /// Timing is the last column, so stripping it leaves a deterministic file.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let keys = self.error_keys();
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for r in &self.rows {
            w.write_record(self.record(r, &keys))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| crate::error::Error::Internal(e.to_string()))
    }

    /// Tidy plot data: one line per row with the swept `parameter` value.
    pub fn write_plot_data<W: Write>(&self, parameter: &str, writer: W) -> Result<()> {
        let keys = self.error_keys();
        let mut w = csv::Writer::from_writer(writer);
        let mut head: Vec<String> = ["parameter", "value", "model", "approach", "drift_method", "diffusion_method", "seed", "status"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        head.extend(keys.iter().cloned());
        head.extend(["max_drift_error", "max_cov_error", "rmse_full", "rmse_drift", "rmse_diffusion"].map(String::from));
        w.write_record(&head)?;
        for r in &self.rows {
            let value = match parameter {
                "eps" => fmt_f64(r.eps),
                _ => r.paths.to_string(),
            };
            let mut rec = vec![
                parameter.to_string(),
                value,
                r.model.clone(),
                r.approach.clone(),
                r.drift_method.clone(),
                r.diffusion_method.clone(),
                r.seed.to_string(),
                r.status.clone(),
            ];
            rec.extend(keys.iter().map(|k| opt(r.errors.get(k).copied())));
            rec.extend([
                opt(max_error(r, 'f')),
                opt(max_error(r, 'C')),
                opt(r.rmse_full),
                opt(r.rmse_drift),
                opt(r.rmse_diffusion),
            ]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Text table in the layout of a comparison table: one column per row of
    /// the ledger, one line per coefficient error and metric.
    pub fn render_table(&self) -> String {
        let keys = self.error_keys();
        let heads: Vec<String> = self
            .rows
            .iter()
            .map(|r| {
                let mut h = format!("{}-{}", r.approach, r.drift_method);
                if r.diffusion_method != r.drift_method {
                    let _ = write!(h, "/{}", r.diffusion_method);
                }
                if self.rows.iter().any(|o| o.seed != r.seed) {
                    let _ = write!(h, "#{}", r.seed);
                }
                h
            })
            .collect();
        let mut lines: Vec<(String, Vec<String>)> = Vec::new();
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.2e}")).unwrap_or_else(|| "-".into());
        for k in &keys {
            lines.push((k.clone(), self.rows.iter().map(|r| cell(r.errors.get(k).copied())).collect()));
        }
        lines.push(("RMSE full".into(), self.rows.iter().map(|r| cell(r.rmse_full)).collect()));
        lines.push(("RMSE drift".into(), self.rows.iter().map(|r| cell(r.rmse_drift)).collect()));
        lines.push(("RMSE diffusion".into(), self.rows.iter().map(|r| cell(r.rmse_diffusion)).collect()));
        lines.push((
            "CPU [s]".into(),
            self.rows.iter().map(|r| format!("{:.2}", r.cpu_seconds)).collect(),
        ));
        lines.push((
            "status".into(),
            self.rows.iter().map(|r| if r.is_ok() { "ok".into() } else { "FAILED".into() }).collect(),
        ));
        let first = lines.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let widths: Vec<usize> = (0..self.rows.len())
            .map(|j| lines.iter().map(|(_, c)| c[j].len()).chain([heads[j].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let _ = write!(out, "{:first$}", "");
        for (h, w) in heads.iter().zip(&widths) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for (label, cells) in &lines {
            let _ = write!(out, "{label:first$}");
            for (c, w) in cells.iter().zip(&widths) {
                let _ = write!(out, "  {c:>w$}");
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::SupportCheck;

    fn row(seed: u64, key: &str, err: f64) -> BenchmarkResult {
        BenchmarkResult {
            model: "logistic".into(),
            approach: "B1".into(),
            drift_method: "KM".into(),
            diffusion_method: "KM".into(),
            diffusion_mode: "matched".into(),
            paths: 10,
            eps: 1e-4,
            lambda_f: 0.025,
            lambda_g: 0.025,
            seed,
            status: "ok".into(),
            support: Some(SupportCheck { drift_exact: true, cov_exact: false }),
            errors: [(key.to_string(), err)].into_iter().collect(),
            rmse_full: None,
            rmse_drift: Some(0.5),
            rmse_diffusion: Some(0.25),
            note: String::new(),
            cpu_seconds: 1.5,
        }
    }

    #[test]
    fn columns_cover_every_key_and_end_with_timing() {
        let l = Ledger::new(vec![row(1, "f1:X(t)", 1e-3), row(2, "C11:X(t)^2", 2e-3)]);
        let text = l.to_csv_string().unwrap();
        let mut lines = text.lines();
        let head: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(*head.last().unwrap(), "cpu_seconds");
        assert!(head.contains(&"f1:X(t)") && head.contains(&"C11:X(t)^2"));
        assert_eq!(lines.count(), 2);
        let table = l.render_table();
        assert!(table.contains("B1-KM#1") && table.contains("1.00e-3"));
    }
}
