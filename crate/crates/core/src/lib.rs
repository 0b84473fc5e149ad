//! Event-value extraction from semi-structured, evolving log files.
//!
//! The toolkit trains small recurrent and convolutional parsers that read a
//! whole log line and emit the value of one chosen event key (or a "no value"
//! decision), injects key mutations into test corpora to simulate software
//! evolution, and compares the neural parsers with two template miners
//! (Drain and AEL) under a per-line F1 score.
//!
//! Pipeline overview:
//!
//! ```text
//! raw log ─▶ corpus::label_corpus ─▶ corpus::split ─┬─▶ textprep ─▶ models::train ─▶ predict
//!                                                   └─▶ mutator::variant_matrix ─▶ templates (refit)
//!                                                                   evaluator::run_experiment ─▶ report
//! ```

pub mod corpus;
pub mod error;
pub mod evaluator;
pub mod manifest;
pub mod models;
pub mod mutator;
pub mod nncore;
pub mod templates;
pub mod textprep;

pub use corpus::{CorpusSplit, EventSpec, Label, LabeledCorpus, LogRecord, SplitSizes};
pub use error::{Error, Result};
pub use evaluator::{f1, ConfusionCounts, Method, ReportMatrix, RunResult};
pub use models::{ModelConfig, ModelKind, TrainConfig, TrainedModel};
pub use mutator::{MutatedCorpus, MutationKind, MutationPlan};
pub use nncore::Tensor;
pub use templates::EventTemplate;
pub use textprep::{PrepConfig, Vocabulary};

/// Version string recorded in run manifests and checkpoints.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
