//! File layout below `--out`. Every dataset gets its own subdirectory.

use std::path::{Path, PathBuf};

use flexlog::models::ModelKind;
use flexlog::mutator::MutationPlan;

pub const MANIFEST: &str = "manifest.json";

pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.out.join(MANIFEST)
    }

    pub fn dataset(&self, name: &str) -> DatasetDir {
        DatasetDir {
            root: self.out.join(name.to_lowercase()),
        }
    }

    pub fn matrix(&self) -> PathBuf {
        self.out.join("eval").join("matrix.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
}

pub struct DatasetDir {
    pub root: PathBuf,
}

impl DatasetDir {
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train.log")
    }

    pub fn train_labels(&self) -> PathBuf {
        self.root.join("train_labels.csv")
    }

    pub fn test_log(&self) -> PathBuf {
        self.root.join("test.log")
    }

    pub fn test_labels(&self) -> PathBuf {
        self.root.join("test_labels.csv")
    }

    pub fn variants_dir(&self) -> PathBuf {
        self.root.join("variants")
    }

    pub fn variants_csv(&self) -> PathBuf {
        self.variants_dir().join("variants.csv")
    }

    pub fn variant_log(&self, plan: &MutationPlan) -> PathBuf {
        self.variants_dir().join(format!("{}.log", plan.name()))
    }

    pub fn variant_labels(&self, plan: &MutationPlan) -> PathBuf {
        self.variants_dir().join(format!("{}_labels.csv", plan.name()))
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.csv")
    }

    pub fn train_encoded(&self) -> PathBuf {
        self.root.join("train_encoded.csv")
    }

    pub fn checkpoint(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.root.join("models").join(format!("{kind}-seed{seed}.ckpt"))
    }

    pub fn training_log(&self, kind: ModelKind, seed: u64) -> PathBuf {
        self.root.join("models").join(format!("{kind}-seed{seed}_training.csv"))
    }

    pub fn predictions(&self, kind: ModelKind, seed: u64, plan: &MutationPlan) -> PathBuf {
        self.root
            .join("predictions")
            .join(format!("{kind}-seed{seed}-{}.csv", plan.name()))
    }

    pub fn templates(&self, method: &str, plan: &MutationPlan) -> PathBuf {
        self.root.join("templates").join(format!("{method}-{}.txt", plan.name()))
    }
}
