//! Per-line F1 scoring, the experiment matrix and report emission.

mod experiment;
mod report;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::models::ModelKind;
use crate::mutator::MutationKind;

pub use experiment::{
    canonical_label, evaluate_lookup, evaluate_model, evaluate_templates, prepare_and_train, run_experiment,
    run_experiment_with, DatasetInput, ExperimentConfig, Timing,
};
pub use report::{emit_report, AggregateRow, ReportFormat, CSV_HEADER, F1_RULE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("truth and predictions differ in length ({truth} vs {pred})")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("report matrix is empty")]
    EmptyMatrix,
    #[error("unknown method {0:?}; valid: lstm, stateful-lstm, fcn, lstm-fcn, gru-fcn, drain, ael, lookup")]
    UnknownMethod(String),
    #[error("unknown timing mode {0:?}; valid: wall, off")]
    UnknownTiming(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-line decision counts. A wrong value on an event line counts once as
/// `fn` and once as `fp`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub r#fn: usize,
}

impl ConfusionCounts {
    pub fn from_labels(truth: &[Label], pred: &[Label]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::LengthMismatch {
                truth: truth.len(),
                pred: pred.len(),
            });
        }
        let mut c = Self::default();
        for (t, p) in truth.iter().zip(pred) {
            match (t, p) {
                (Label::Value(_), _) if t == p => c.tp += 1,
                (Label::Value(_), Label::Value(_)) => {
                    c.r#fn += 1;
                    c.fp += 1;
                }
                (Label::Value(_), Label::NoValue) => c.r#fn += 1,
                (Label::NoValue, Label::Value(_)) => c.fp += 1,
                (Label::NoValue, Label::NoValue) => {}
            }
        }
        Ok(c)
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.r#fn == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.r#fn) as f64
        }
    }

    /// `2tp / (2tp + fp + fn)`, and 1.0 when all three counts are zero.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.r#fn;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

pub fn f1(truth: &[Label], pred: &[Label]) -> Result<f64, EvalError> {
    Ok(ConfusionCounts::from_labels(truth, pred)?.f1())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    Model(ModelKind),
    Drain,
    Ael,
    /// Exact-line memorisation of the training split.
    Lookup,
}

impl Method {
    /// The five neural parsers plus Drain and AEL.
    pub fn standard() -> Vec<Method> {
        ModelKind::ALL
            .into_iter()
            .map(Method::Model)
            .chain([Method::Drain, Method::Ael])
            .collect()
    }

    pub fn id(self) -> &'static str {
        match self {
            Method::Model(k) => k.id(),
            Method::Drain => "drain",
            Method::Ael => "ael",
            Method::Lookup => "lookup",
        }
    }

    pub fn parse(id: &str) -> Result<Self, EvalError> {
        match id {
            "drain" => Ok(Method::Drain),
            "ael" => Ok(Method::Ael),
            "lookup" => Ok(Method::Lookup),
            _ => ModelKind::parse(id)
                .map(Method::Model)
                .map_err(|_| EvalError::UnknownMethod(id.to_string())),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.id().to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = EvalError;
    fn try_from(s: String) -> Result<Self, EvalError> {
        Method::parse(&s)
    }
}

/// One (dataset, method, variant, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub dataset: String,
    pub method: Method,
    pub kind: MutationKind,
    pub start_line: usize,
    /// `None` when the cell failed; `error` then says why.
    pub f1: Option<f64>,
    pub runtime_s: f64,
    pub seed: u64,
    pub error: Option<String>,
}

impl RunResult {
    fn sort_key(&self) -> (&str, Method, MutationKind, usize, u64) {
        (&self.dataset, self.method, self.kind, self.start_line, self.seed)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMatrix {
    pub rows: Vec<RunResult>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    quantile(values, 0.5)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Linear-interpolated quantile of the sorted values.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

impl ReportMatrix {
    pub fn new(mut rows: Vec<RunResult>) -> Self {
        rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self.rows.iter().map(|r| r.method).collect();
        m.sort();
        m.dedup();
        m
    }

    /// Successful F1 scores of `method`, optionally restricted to one mutation kind.
    pub fn scores(&self, method: Method, kind: Option<MutationKind>) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.method == method && kind.is_none_or(|k| r.kind == k))
            .filter_map(|r| r.f1)
            .collect()
    }

    pub fn find(&self, dataset: &str, method: Method, kind: MutationKind, start_line: usize) -> Option<&RunResult> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.method == method && r.kind == kind && r.start_line == start_line)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunResult> {
        self.rows.iter().filter(|r| r.error.is_some())
    }
}
