use std::collections::HashMap;

use crate::corpus::{Label, LabeledCorpus};
use crate::textprep::{label_token, normalize, PrepConfig, PrepError};

/// Memorises the label of every normalized training line. Unseen lines get no value.
#[derive(Clone, Debug)]
pub struct LookupParser {
    cfg: PrepConfig,
    table: HashMap<Vec<String>, Label>,
}

impl LookupParser {
    pub fn fit(train: &LabeledCorpus, cfg: &PrepConfig) -> Result<Self, PrepError> {
        let mut table = HashMap::new();
        for (rec, label) in train.iter() {
            let key = normalize(&rec.raw_text, cfg);
            let value = match label_token(label, cfg)? {
                Some(t) => Label::Value(t),
                None => Label::NoValue,
            };
            table.entry(key).or_insert(value);
        }
        Ok(Self { cfg: cfg.clone(), table })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn predict(&self, line: &str) -> Label {
        self.table
            .get(&normalize(line, &self.cfg))
            .cloned()
            .unwrap_or(Label::NoValue)
    }
}
