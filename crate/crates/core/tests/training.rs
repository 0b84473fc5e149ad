use std::time::{Duration, Instant};

use flexlog::corpus::{disjoint_value_split, generate_synthetic, synthetic_spec, Label};
use flexlog::evaluator::canonical_label;
use flexlog::models::{train, LookupParser, ModelConfig, ModelKind, TrainConfig, TrainedModel};
use flexlog::textprep::{prepare, PrepConfig, PAD_ID};
use flexlog::CorpusSplit;

fn unseen_accuracy(split: &CorpusSplit, pred: &[Label], prep: &PrepConfig) -> f64 {
    let truth: Vec<Label> = split.test.labels().iter().map(|l| canonical_label(l, prep)).collect();
    let events: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].is_value()).collect();
    assert!(!events.is_empty());
    events.iter().filter(|&&i| pred[i] == truth[i]).count() as f64 / events.len() as f64
}

#[test]
fn two_hundred_line_corpus_reaches_high_validation_f1() {
    let spec = synthetic_spec();
    let corpus = generate_synthetic(&spec, 200, 7);
    let p = prepare(&corpus, &spec.event_key, PrepConfig::default()).unwrap();
    let tc = TrainConfig {
        batch_size: 8,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let m = train(&ModelConfig::new(ModelKind::StatefulLstm), &p.vocab, &p.cfg, &p.train, &tc).unwrap();
    assert!(start.elapsed() < Duration::from_secs(60));
    let best = &m.log[m.best_epoch - 1];
    assert!(best.val_f1 >= 0.95, "best validation F1 {} at epoch {}", best.val_f1, best.epoch);
}

fn witness(pointer_head: bool) -> (f64, CorpusSplit, TrainedModel) {
    let spec = synthetic_spec();
    let split = disjoint_value_split(&spec, 1000, 400, 20, 7);
    let p = prepare(&split.train, &spec.event_key, PrepConfig::default()).unwrap();
    let cfg = ModelConfig {
        pointer_head,
        ..ModelConfig::new(ModelKind::StatefulLstm)
    };
    let m = train(&cfg, &p.vocab, &p.cfg, &p.train, &TrainConfig::default()).unwrap();
    let pred = m.predict_lines(split.test.lines()).unwrap();
    (unseen_accuracy(&split, &pred, &p.cfg), split, m)
}

#[test]
fn copy_head_generalizes_where_dense_head_and_lookup_cannot() {
    let (with_copy, split, _) = witness(true);
    assert!(with_copy >= 0.9, "copy head unseen-value accuracy {with_copy}");

    let (dense_only, _, _) = witness(false);
    assert!(dense_only <= 0.05, "dense head unseen-value accuracy {dense_only}");

    let lookup = LookupParser::fit(&split.train, &PrepConfig::default()).unwrap();
    let pred: Vec<Label> = split.test.lines().map(|l| lookup.predict(l)).collect();
    assert_eq!(unseen_accuracy(&split, &pred, &PrepConfig::default()), 0.0);
}

#[test]
fn all_pad_line_predicts_a_distribution() {
    let spec = synthetic_spec();
    let corpus = generate_synthetic(&spec, 120, 2);
    let p = prepare(&corpus, &spec.event_key, PrepConfig::default()).unwrap();
    let tc = TrainConfig {
        max_epochs: 2,
        patience: 1,
        batch_size: 16,
        ..TrainConfig::default()
    };
    for kind in ModelKind::ALL {
        let m = train(&ModelConfig::new(kind), &p.vocab, &p.cfg, &p.train, &tc).unwrap();
        let pad = vec![PAD_ID; m.max_len()];
        let probs = m.probabilities(&pad).unwrap();
        let total: f64 = probs.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{kind}: {total}");
        m.predict(&pad).unwrap();
        assert_eq!(m.predict_lines(["", "the of and"]).unwrap().len(), 2);
    }
}
