//! The five neural parsers, their training discipline and per-line prediction.

mod lookup;
mod network;
mod train;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nncore::NnError;
use crate::textprep::PrepError;

pub use lookup::LookupParser;
pub use network::{ForwardOut, Network, RecurrentState};
pub use train::{
    gradient_check, id_label, train, EpochRecord, InferenceSession, TrainedModel, OOV_PREDICTION,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model id {0:?}; valid ids: lstm, stateful-lstm, fcn, lstm-fcn, gru-fcn")]
    UnknownKind(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch} (first non-finite op: {op})")]
    NonFinite { epoch: usize, batch: usize, op: String },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("checkpoint was written for vocabulary {expected}, got {actual}")]
    VocabMismatch { expected: String, actual: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Prep(#[from] PrepError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    Lstm,
    StatefulLstm,
    Fcn,
    LstmFcn,
    GruFcn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Lstm,
        ModelKind::StatefulLstm,
        ModelKind::Fcn,
        ModelKind::LstmFcn,
        ModelKind::GruFcn,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::StatefulLstm => "stateful-lstm",
            ModelKind::Fcn => "fcn",
            ModelKind::LstmFcn => "lstm-fcn",
            ModelKind::GruFcn => "gru-fcn",
        }
    }

    pub fn parse(id: &str) -> Result<Self, ModelError> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| ModelError::UnknownKind(id.to_string()))
    }

    pub fn has_conv(self) -> bool {
        matches!(self, ModelKind::Fcn | ModelKind::LstmFcn | ModelKind::GruFcn)
    }

    pub fn is_recurrent(self) -> bool {
        self != ModelKind::Fcn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Architecture and optimizer settings. Fields a kind does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// LSTM or GRU units.
    pub units: usize,
    /// Local average-pooling window over time (LSTM kinds).
    pub pool_window: usize,
    /// Dropout on the one-hot input, one decision per timestep (LSTM-FCN, GRU-FCN).
    pub input_dropout: f64,
    /// Per-sequence mask on the state entering the recurrent matmuls (GRU-FCN).
    pub recurrent_dropout: f64,
    /// Dropout before the head: after pooling for LSTM kinds, on the recurrent
    /// branch output for the hybrid kinds.
    pub post_dropout: f64,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub lr: f64,
    /// Zero the carried states every this many epochs (stateful LSTM); 0 disables.
    pub state_reset_period: usize,
    /// Adds a per-position score to the logit of each input token's own id.
    pub pointer_head: bool,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        let base = ModelConfig {
            kind,
            units: 32,
            pool_window: 2,
            input_dropout: 0.0,
            recurrent_dropout: 0.0,
            post_dropout: 0.61,
            filters: Vec::new(),
            kernels: Vec::new(),
            lr: 1e-3,
            state_reset_period: 0,
            pointer_head: true,
        };
        match kind {
            ModelKind::Lstm => base,
            ModelKind::StatefulLstm => ModelConfig {
                state_reset_period: 40,
                ..base
            },
            ModelKind::Fcn => ModelConfig {
                units: 0,
                post_dropout: 0.0,
                filters: vec![16, 16, 32],
                kernels: vec![7, 5, 5],
                lr: 1e-1,
                ..base
            },
            ModelKind::LstmFcn => ModelConfig {
                units: 150,
                input_dropout: 0.17,
                post_dropout: 0.25,
                filters: vec![32, 32, 512],
                kernels: vec![7, 5, 5],
                lr: 1e-2,
                ..base
            },
            ModelKind::GruFcn => ModelConfig {
                units: 32,
                input_dropout: 0.02,
                recurrent_dropout: 0.25,
                post_dropout: 0.82,
                filters: vec![32, 32, 512],
                kernels: vec![7, 5, 5],
                lr: 1e-2,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, r) in [
            ("input_dropout", self.input_dropout),
            ("recurrent_dropout", self.recurrent_dropout),
            ("post_dropout", self.post_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1)"));
            }
        }
        if self.kind.is_recurrent() && self.units == 0 {
            return bad("recurrent units must be at least 1".into());
        }
        if self.kind.has_conv() {
            if self.filters.len() != 3 || self.kernels.len() != 3 {
                return bad("convolutional kinds need three filter counts and three kernel sizes".into());
            }
            if self.kernels.iter().any(|k| k % 2 == 0) || self.filters.contains(&0) {
                return bad(format!("kernels {:?} must be odd, filters {:?} positive", self.kernels, self.filters));
            }
        }
        if matches!(self.kind, ModelKind::Lstm | ModelKind::StatefulLstm) && self.pool_window == 0 {
            return bad("pool_window must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }

    pub fn is_stateful(&self) -> bool {
        self.kind == ModelKind::StatefulLstm
    }

    /// Pooling window clamped to the sequence length.
    pub fn effective_pool(&self, max_len: usize) -> usize {
        self.pool_window.min(max_len).max(1)
    }

    /// Width of the vector feeding the dense head.
    pub fn head_inputs(&self, max_len: usize) -> usize {
        match self.kind {
            ModelKind::Lstm | ModelKind::StatefulLstm => (max_len / self.effective_pool(max_len)) * self.units,
            ModelKind::Fcn => self.filters[2],
            ModelKind::LstmFcn | ModelKind::GruFcn => self.filters[2] + self.units,
        }
    }

    /// Width of the per-position features feeding the copy head.
    pub fn position_features(&self) -> usize {
        match self.kind {
            ModelKind::Lstm | ModelKind::StatefulLstm => self.units,
            ModelKind::Fcn => self.filters[2],
            ModelKind::LstmFcn | ModelKind::GruFcn => self.filters[2] + self.units,
        }
    }
}

/// Optimization loop settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a strict validation-F1 improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Trailing fraction of the training examples held out for validation.
    pub validation_fraction: f64,
    /// Probability of replacing a non-target input token by OOV during
    /// training, so the OOV embedding is learnt and unseen keys are tolerated.
    #[serde(default)]
    pub oov_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 60,
            patience: 20,
            batch_size: 32,
            seed: 7,
            validation_fraction: 0.1,
            oov_rate: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(ModelError::Config(format!(
                "need 0 <= patience ({}) < max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.oov_rate) {
            return Err(ModelError::Config(format!("oov_rate {} outside [0, 1)", self.oov_rate)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(ModelError::Config(format!(
                "validation_fraction {} outside [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_ids_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(ModelKind::parse(k.id()).unwrap(), k);
        }
        let e = ModelKind::parse("bogus").unwrap_err().to_string();
        assert!(e.contains("stateful-lstm") && e.contains("gru-fcn"));
    }

    #[test]
    fn default_hyperparameters() {
        let c = ModelConfig::new(ModelKind::LstmFcn);
        assert_eq!((c.units, c.filters.clone(), c.kernels.clone()), (150, vec![32, 32, 512], vec![7, 5, 5]));
        assert_eq!((c.input_dropout, c.post_dropout, c.lr), (0.17, 0.25, 1e-2));
        let c = ModelConfig::new(ModelKind::GruFcn);
        assert_eq!((c.units, c.input_dropout, c.recurrent_dropout, c.post_dropout), (32, 0.02, 0.25, 0.82));
        let c = ModelConfig::new(ModelKind::Fcn);
        assert_eq!((c.filters.clone(), c.lr), (vec![16, 16, 32], 1e-1));
        let c = ModelConfig::new(ModelKind::StatefulLstm);
        assert_eq!((c.units, c.post_dropout, c.state_reset_period, c.lr), (32, 0.61, 40, 1e-3));
        for k in ModelKind::ALL {
            ModelConfig::new(k).validate().unwrap();
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::new(ModelKind::Fcn);
        c.kernels = vec![7, 4, 5];
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(ModelKind::Lstm);
        c.post_dropout = 1.0;
        assert!(c.validate().is_err());
        let t = TrainConfig {
            patience: 5,
            max_epochs: 5,
            ..TrainConfig::default()
        };
        assert!(t.validate().is_err());
    }
}
