use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{f1, EvalError, Method, ReportMatrix, RunResult};
use crate::corpus::{CorpusSplit, EventSpec, Label};
use crate::error::Error;
use crate::models::{train, LookupParser, ModelConfig, ModelKind, TrainConfig, TrainedModel};
use crate::mutator::{variant_matrix_with, MutatedCorpus, DEFAULT_START_LINES};
use crate::templates::{AelConfig, DrainConfig, Miner, TemplateParser};
use crate::textprep::{label_token, prepare, PrepConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timing {
    /// Wall-clock seconds per cell.
    #[default]
    Wall,
    /// Runtimes recorded as 0, for byte-stable reports.
    Off,
}

impl Timing {
    pub fn parse(s: &str) -> Result<Self, EvalError> {
        match s {
            "wall" => Ok(Timing::Wall),
            "off" => Ok(Timing::Off),
            _ => Err(EvalError::UnknownTiming(s.to_string())),
        }
    }

    fn seconds(self, since: Instant) -> f64 {
        match self {
            Timing::Wall => since.elapsed().as_secs_f64(),
            Timing::Off => 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetInput {
    pub spec: EventSpec,
    pub split: CorpusSplit,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub start_lines: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Its `seed` is replaced by each entry of `seeds`.
    pub train: TrainConfig,
    /// Per-kind overrides; kinds not listed use [`ModelConfig::new`].
    pub models: BTreeMap<ModelKind, ModelConfig>,
    pub drain: DrainConfig,
    pub ael: AelConfig,
    pub prep: PrepConfig,
    pub timing: Timing,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::standard(),
            start_lines: DEFAULT_START_LINES.to_vec(),
            seeds: vec![TrainConfig::default().seed],
            train: TrainConfig::default(),
            models: BTreeMap::new(),
            drain: DrainConfig::default(),
            ael: AelConfig::default(),
            prep: PrepConfig::default(),
            timing: Timing::Wall,
        }
    }
}

impl ExperimentConfig {
    pub fn model_config(&self, kind: ModelKind) -> ModelConfig {
        self.models.get(&kind).cloned().unwrap_or_else(|| ModelConfig::new(kind))
    }
}

/// Both sides of the F1 comparison go through the tokenizer, so `126775`
/// and a lemmatized or lower-cased prediction compare on equal terms.
pub fn canonical_label(label: &Label, prep: &PrepConfig) -> Label {
    match label_token(label, prep) {
        Ok(Some(t)) => Label::Value(t),
        Ok(None) => Label::NoValue,
        Err(_) => label.clone(),
    }
}

fn score(truth: &[Label], pred: &[Label], prep: &PrepConfig) -> Result<f64, EvalError> {
    let t: Vec<Label> = truth.iter().map(|l| canonical_label(l, prep)).collect();
    let p: Vec<Label> = pred.iter().map(|l| canonical_label(l, prep)).collect();
    f1(&t, &p)
}

/// Builds the vocabulary from the training split and trains one model.
pub fn prepare_and_train(
    data: &DatasetInput,
    model: &ModelConfig,
    prep: &PrepConfig,
    tc: &TrainConfig,
) -> Result<TrainedModel, Error> {
    let p = prepare(&data.split.train, &data.spec.event_key, prep.clone())?;
    Ok(train(model, &p.vocab, &p.cfg, &p.train, tc)?)
}

fn cell(data: &DatasetInput, method: Method, v: &MutatedCorpus, seed: u64) -> RunResult {
    RunResult {
        dataset: data.spec.dataset_name.clone(),
        method,
        kind: v.plan.kind,
        start_line: v.plan.start_line,
        f1: None,
        runtime_s: 0.0,
        seed,
        error: None,
    }
}

fn finish(mut r: RunResult, outcome: Result<f64, Error>, runtime_s: f64) -> RunResult {
    r.runtime_s = runtime_s;
    match outcome {
        Ok(f) => r.f1 = Some(f),
        Err(e) => r.error = Some(e.to_string()),
    }
    r
}

/// Scores a trained model on each variant, streaming lines in order.
pub fn evaluate_model(
    data: &DatasetInput,
    model: &TrainedModel,
    variants: &[MutatedCorpus],
    timing: Timing,
) -> Vec<RunResult> {
    let method = Method::Model(model.kind());
    variants
        .iter()
        .map(|v| {
            let start = Instant::now();
            let outcome = model
                .predict_lines(v.corpus.lines())
                .map_err(Error::from)
                .and_then(|pred| Ok(score(v.corpus.labels(), &pred, &model.prep)?));
            finish(cell(data, method, v, model.train_config.seed), outcome, timing.seconds(start))
        })
        .collect()
}

/// Refits the miner on each variant and scores its own extraction.
pub fn evaluate_templates(
    data: &DatasetInput,
    miner: &Miner,
    variants: &[MutatedCorpus],
    prep: &PrepConfig,
    seed: u64,
    timing: Timing,
) -> Vec<RunResult> {
    let method = match miner {
        Miner::Drain(_) => Method::Drain,
        Miner::Ael(_) => Method::Ael,
    };
    variants
        .iter()
        .map(|v| {
            let start = Instant::now();
            let outcome = TemplateParser::fit(&v.corpus, &data.spec, miner)
                .map_err(Error::from)
                .and_then(|p| Ok(score(v.corpus.labels(), &p.extract(v.corpus.lines()).labels, prep)?));
            finish(cell(data, method, v, seed), outcome, timing.seconds(start))
        })
        .collect()
}

pub fn evaluate_lookup(
    data: &DatasetInput,
    variants: &[MutatedCorpus],
    prep: &PrepConfig,
    seed: u64,
    timing: Timing,
) -> Vec<RunResult> {
    let parser = LookupParser::fit(&data.split.train, prep);
    variants
        .iter()
        .map(|v| {
            let start = Instant::now();
            let outcome = match &parser {
                Ok(p) => {
                    let pred: Vec<Label> = v.corpus.lines().map(|l| p.predict(l)).collect();
                    score(v.corpus.labels(), &pred, prep).map_err(Error::from)
                }
                Err(e) => Err(Error::Model(crate::models::ModelError::Config(e.to_string()))),
            };
            finish(cell(data, Method::Lookup, v, seed), outcome, timing.seconds(start))
        })
        .collect()
}

/// Runs every (dataset, method, variant) cell, training neural models with
/// [`prepare_and_train`].
pub fn run_experiment(datasets: &[DatasetInput], cfg: &ExperimentConfig) -> ReportMatrix {
    run_experiment_with(datasets, cfg, |data, model, tc| prepare_and_train(data, model, &cfg.prep, tc))
}

/// As [`run_experiment`], with neural models supplied by `obtain` (e.g. from
/// checkpoints). Neural models train once on the unmutated training split and
/// are scored on all variants; template miners are refit on each variant.
pub fn run_experiment_with<F>(datasets: &[DatasetInput], cfg: &ExperimentConfig, obtain: F) -> ReportMatrix
where
    F: Fn(&DatasetInput, &ModelConfig, &TrainConfig) -> Result<TrainedModel, Error> + Sync,
{
    let variants: Vec<Vec<MutatedCorpus>> = datasets
        .iter()
        .map(|d| variant_matrix_with(&d.split.test, &d.spec, &cfg.start_lines))
        .collect();
    let first_seed = cfg.seeds.first().copied().unwrap_or(cfg.train.seed);
    let mut jobs: Vec<(usize, Method, u64)> = Vec::new();
    for di in 0..datasets.len() {
        for &m in &cfg.methods {
            match m {
                Method::Model(_) => jobs.extend(cfg.seeds.iter().map(|&s| (di, m, s))),
                _ => jobs.push((di, m, first_seed)),
            }
        }
    }
    let rows: Vec<RunResult> = jobs
        .par_iter()
        .flat_map_iter(|&(di, method, seed)| {
            let data = &datasets[di];
            let vs = &variants[di];
            match method {
                Method::Model(kind) => {
                    let tc = TrainConfig {
                        seed,
                        ..cfg.train.clone()
                    };
                    match obtain(data, &cfg.model_config(kind), &tc) {
                        Ok(model) => evaluate_model(data, &model, vs, cfg.timing),
                        Err(e) => {
                            log::error!("{} {kind} seed {seed}: {e}", data.spec.dataset_name);
                            vs.iter()
                                .map(|v| RunResult {
                                    error: Some(format!("training failed: {e}")),
                                    ..cell(data, method, v, seed)
                                })
                                .collect()
                        }
                    }
                }
                Method::Drain => evaluate_templates(data, &Miner::Drain(cfg.drain.clone()), vs, &cfg.prep, seed, cfg.timing),
                Method::Ael => evaluate_templates(data, &Miner::Ael(cfg.ael.clone()), vs, &cfg.prep, seed, cfg.timing),
                Method::Lookup => evaluate_lookup(data, vs, &cfg.prep, seed, cfg.timing),
            }
        })
        .collect();
    ReportMatrix::new(rows)
}
