use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{mean, median, quantile, EvalError, Method, ReportMatrix, RunResult};
use crate::mutator::MutationKind;

pub const CSV_HEADER: &str = "dataset,method,kind,start_line,f1,runtime_s,seed";

/// Counting rule recorded in the JSON report.
pub const F1_RULE: &str = "per line: value truth and equal prediction -> tp; value truth and other \
prediction -> fn, plus fp if a value was predicted; no-value truth and value prediction -> fp; \
F1 = 2tp/(2tp+fp+fn), 1.0 when tp=fp=fn=0; labels compared after tokenizer normalization";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub method: Method,
    /// `all`, or one mutation kind.
    pub kind: String,
    pub runs: usize,
    pub median_f1: f64,
    pub mean_f1: f64,
}

impl ReportMatrix {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut out = Vec::new();
        for m in self.methods() {
            let groups = [
                ("all".to_string(), None),
                (MutationKind::None.to_string(), Some(MutationKind::None)),
                (MutationKind::Syn.to_string(), Some(MutationKind::Syn)),
                (MutationKind::Err.to_string(), Some(MutationKind::Err)),
            ];
            for (name, kind) in groups {
                let s = self.scores(m, kind);
                if let (Some(median_f1), Some(mean_f1)) = (median(&s), mean(&s)) {
                    out.push(AggregateRow {
                        method: m,
                        kind: name,
                        runs: s.len(),
                        median_f1,
                        mean_f1,
                    });
                }
            }
        }
        out
    }
}

fn fmt_f1(r: &RunResult) -> String {
    match r.f1 {
        Some(f) => format!("{f:.6}"),
        None => "error".to_string(),
    }
}

fn write(path: &Path, body: &str) -> Result<PathBuf, EvalError> {
    fs::write(path, body).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path.to_path_buf())
}

fn csv_body(m: &ReportMatrix) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in &m.rows {
        s.push_str(&format!(
            "{},{},{},{},{},{:.3},{}\n",
            r.dataset, r.method, r.kind, r.start_line, fmt_f1(r), r.runtime_s, r.seed
        ));
    }
    s
}

fn aggregate_body(m: &ReportMatrix) -> String {
    let mut s = String::from("method,kind,runs,median_f1,mean_f1\n");
    for a in m.aggregate() {
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            a.method, a.kind, a.runs, a.median_f1, a.mean_f1
        ));
    }
    s
}

/// Box-plot quantiles per method over all successful cells.
fn plot_body(m: &ReportMatrix) -> String {
    let mut s = String::from("method,min,q1,median,q3,max\n");
    for method in m.methods() {
        let v = m.scores(method, None);
        if v.is_empty() {
            continue;
        }
        let q: Vec<String> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&p| format!("{:.6}", quantile(&v, p).unwrap()))
            .collect();
        s.push_str(&format!("{method},{}\n", q.join(",")));
    }
    s
}

#[derive(Serialize)]
struct JsonReport<'a> {
    f1_rule: &'a str,
    rows: &'a [RunResult],
    aggregate: Vec<AggregateRow>,
}

/// Writes the report files into `dir` and returns their paths: `report.csv`,
/// `aggregate.csv` and `plot_data.csv` for CSV; `report.json` for JSON.
pub fn emit_report(matrix: &ReportMatrix, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>, EvalError> {
    if matrix.is_empty() {
        return Err(EvalError::EmptyMatrix);
    }
    fs::create_dir_all(dir).map_err(|source| EvalError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let sorted = ReportMatrix::new(matrix.rows.clone());
    let mut paths = Vec::new();
    for f in formats {
        match f {
            ReportFormat::Csv => {
                paths.push(write(&dir.join("report.csv"), &csv_body(&sorted))?);
                paths.push(write(&dir.join("aggregate.csv"), &aggregate_body(&sorted))?);
                paths.push(write(&dir.join("plot_data.csv"), &plot_body(&sorted))?);
            }
            ReportFormat::Json => {
                let report = JsonReport {
                    f1_rule: F1_RULE,
                    rows: &sorted.rows,
                    aggregate: sorted.aggregate(),
                };
                let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
                body.push('\n');
                paths.push(write(&dir.join("report.json"), &body)?);
            }
        }
    }
    Ok(paths)
}
