//! Shared fixtures for the pipeline benchmarks.

use flexlog::corpus::{generate_synthetic, synthetic_spec, LabeledCorpus};
use flexlog::textprep::{prepare, Prepared};
use flexlog::PrepConfig;

/// A synthetic HealthApp-like corpus and its prepared training data.
pub fn fixture(lines: usize, seed: u64) -> (LabeledCorpus, Prepared) {
    let spec = synthetic_spec();
    let corpus = generate_synthetic(&spec, lines, seed);
    let prepared = prepare(&corpus, &spec.event_key, PrepConfig::default()).expect("synthetic corpus prepares");
    (corpus, prepared)
}
