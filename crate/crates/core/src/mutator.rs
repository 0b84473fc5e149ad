//! Event-key mutations that simulate software evolution on a test corpus.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventSpec, LabeledCorpus};

/// Default mutation start lines within the test slice.
pub const DEFAULT_START_LINES: [usize; 3] = [500, 1000, 1500];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MutationKind {
    None,
    Syn,
    Err,
}

impl MutationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MutationKind::None => "none",
            MutationKind::Syn => "syn",
            MutationKind::Err => "err",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(MutationKind::None),
            "syn" => Some(MutationKind::Syn),
            "err" => Some(MutationKind::Err),
            _ => None,
        }
    }
}

impl fmt::Display for MutationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to mutate and from which test line (1-based, inclusive) onwards.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MutationPlan {
    pub kind: MutationKind,
    pub start_line: usize,
}

impl MutationPlan {
    pub const NONE: MutationPlan = MutationPlan {
        kind: MutationKind::None,
        start_line: 0,
    };

    pub fn new(kind: MutationKind, start_line: usize) -> Self {
        match kind {
            MutationKind::None => Self::NONE,
            _ => Self {
                kind,
                start_line: start_line.max(1),
            },
        }
    }

    /// Short identifier such as `none` or `syn-500`.
    pub fn name(&self) -> String {
        match self.kind {
            MutationKind::None => "none".to_string(),
            k => format!("{}-{}", k, self.start_line),
        }
    }

    /// Inverse of [`MutationPlan::name`].
    pub fn parse(name: &str) -> Option<Self> {
        if name == "none" {
            return Some(Self::NONE);
        }
        let (k, s) = name.split_once('-')?;
        let kind = MutationKind::parse(k).filter(|k| *k != MutationKind::None)?;
        let start: usize = s.parse().ok().filter(|s| *s >= 1)?;
        Some(Self::new(kind, start))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutatedCorpus {
    pub corpus: LabeledCorpus,
    pub plan: MutationPlan,
    /// 1-based positions within the test slice of the rewritten lines.
    pub mutated_line_indices: Vec<usize>,
    /// Set when the event key occurs nowhere in the source corpus.
    pub key_absent: bool,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Replaces every occurrence of `key` bounded by non-alphanumeric characters or
/// the string edges. Returns `None` when nothing was replaced.
pub fn replace_whole_token(text: &str, key: &str, replacement: &str) -> Option<String> {
    if key.is_empty() {
        return None;
    }
    let bytes = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut changed = false;
    for (pos, _) in text.match_indices(key) {
        if pos < last {
            continue;
        }
        let end = pos + key.len();
        let left_ok = pos == 0 || !is_word_byte(bytes[pos - 1]);
        let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
        if left_ok && right_ok {
            out.push_str(&text[last..pos]);
            out.push_str(replacement);
            last = end;
            changed = true;
        }
    }
    if !changed {
        return None;
    }
    out.push_str(&text[last..]);
    Some(out)
}

pub fn contains_whole_token(text: &str, key: &str) -> bool {
    replace_whole_token(text, key, "").is_some()
}

pub fn apply_mutation(test: &LabeledCorpus, spec: &EventSpec, plan: MutationPlan) -> MutatedCorpus {
    let key_absent = !test.lines().any(|l| contains_whole_token(l, &spec.event_key));
    let replacement = match plan.kind {
        MutationKind::None => {
            return MutatedCorpus {
                corpus: test.clone(),
                plan,
                mutated_line_indices: Vec::new(),
                key_absent,
            }
        }
        MutationKind::Syn => &spec.syn_key,
        MutationKind::Err => &spec.err_key,
    };
    if key_absent {
        log::warn!(
            "event key {:?} does not occur in the {} corpus; mutation {} is a no-op",
            spec.event_key,
            spec.dataset_name,
            plan.name()
        );
    }
    let mut mutated = Vec::new();
    let texts = test
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let pos = i + 1;
            if pos >= plan.start_line {
                if let Some(new) = replace_whole_token(line, &spec.event_key, replacement) {
                    mutated.push(pos);
                    return new;
                }
            }
            line.to_string()
        })
        .collect();
    MutatedCorpus {
        corpus: test.with_texts(texts),
        plan,
        mutated_line_indices: mutated,
        key_absent,
    }
}

/// The seven plans in canonical order: none, then syn and err at each start line.
pub fn variant_plans(start_lines: &[usize]) -> Vec<MutationPlan> {
    let mut plans = vec![MutationPlan::NONE];
    for kind in [MutationKind::Syn, MutationKind::Err] {
        plans.extend(start_lines.iter().map(|&s| MutationPlan::new(kind, s)));
    }
    plans
}

pub fn variant_matrix(test: &LabeledCorpus, spec: &EventSpec) -> Vec<MutatedCorpus> {
    variant_matrix_with(test, spec, &DEFAULT_START_LINES)
}

pub fn variant_matrix_with(test: &LabeledCorpus, spec: &EventSpec, start_lines: &[usize]) -> Vec<MutatedCorpus> {
    variant_plans(start_lines)
        .into_iter()
        .map(|p| apply_mutation(test, spec, p))
        .collect()
}

/// Writes the `variant,kind,start_line,mutated_count` sidecar.
pub fn write_manifest_csv<W: Write>(variants: &[MutatedCorpus], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "kind", "start_line", "mutated_count"])?;
    for v in variants {
        w.write_record([
            v.plan.name(),
            v.plan.kind.to_string(),
            v.plan.start_line.to_string(),
            v.mutated_line_indices.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, synthetic_spec, Label, LogRecord};
    use proptest::prelude::*;

    #[test]
    fn whole_token_only() {
        assert_eq!(replace_whole_token("user root", "user", "name").as_deref(), Some("name root"));
        assert_eq!(replace_whole_token("username root", "user", "name"), None);
        assert_eq!(
            replace_whole_token("a totalCalories=5 totalCalories", "totalCalories", "totalCal").as_deref(),
            Some("a totalCal=5 totalCal")
        );
        assert_eq!(replace_whole_token("User", "user", "x"), None);
    }

    #[test]
    fn syn_rewrites_healthapp_line() {
        let spec = synthetic_spec();
        let c = LabeledCorpus::new(
            vec![
                LogRecord { index: 1, raw_text: "x totalCalories=126775".into() },
                LogRecord { index: 2, raw_text: "x totalCalories=126775".into() },
            ],
            vec![Label::Value("126775".into()); 2],
        )
        .unwrap();
        let m = apply_mutation(&c, &spec, MutationPlan::new(MutationKind::Syn, 2));
        assert_eq!(m.corpus.records()[0].raw_text, "x totalCalories=126775");
        assert_eq!(m.corpus.records()[1].raw_text, "x totalCal=126775");
        assert_eq!(m.mutated_line_indices, vec![2]);
        assert_eq!(m.corpus.labels(), c.labels());
    }

    #[test]
    fn matrix_order_and_labels() {
        let spec = synthetic_spec();
        let c = generate_synthetic(&spec, 2000, 11);
        let vs = variant_matrix(&c, &spec);
        let names: Vec<_> = vs.iter().map(|v| v.plan.name()).collect();
        assert_eq!(names, ["none", "syn-500", "syn-1000", "syn-1500", "err-500", "err-1000", "err-1500"]);
        assert_eq!(vs[0].corpus, c);
        for v in &vs {
            assert_eq!(v.corpus.labels(), c.labels());
        }
        // err-500 differs exactly on event lines at positions >= 500
        let expect: Vec<usize> = c
            .labels()
            .iter()
            .enumerate()
            .filter(|(i, l)| l.is_value() && i + 1 >= 500)
            .map(|(i, _)| i + 1)
            .collect();
        let diff: Vec<usize> = c
            .lines()
            .zip(vs[4].corpus.lines())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i + 1)
            .collect();
        assert_eq!(diff, expect);
        let share = vs[1].mutated_line_indices.len() as f64 / c.event_count() as f64;
        assert!((share - 0.75).abs() < 0.06, "share {share}");
    }

    #[test]
    fn absent_key_is_flagged() {
        let mut spec = synthetic_spec();
        spec.event_key = "nothere".into();
        let c = generate_synthetic(&synthetic_spec(), 50, 1);
        let m = apply_mutation(&c, &spec, MutationPlan::new(MutationKind::Err, 1));
        assert!(m.key_absent);
        assert!(m.mutated_line_indices.is_empty());
        assert_eq!(m.corpus, c);
    }

    #[test]
    fn manifest_csv() {
        let spec = synthetic_spec();
        let c = generate_synthetic(&spec, 100, 2);
        let vs = variant_matrix_with(&c, &spec, &[10]);
        let mut buf = Vec::new();
        write_manifest_csv(&vs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("variant,kind,start_line,mutated_count\nnone,none,0,0\nsyn-10,syn,10,"));
    }

    #[test]
    fn plan_names_round_trip() {
        for p in variant_plans(&DEFAULT_START_LINES) {
            assert_eq!(MutationPlan::parse(&p.name()), Some(p));
        }
        assert_eq!(MutationPlan::parse("syn-0"), None);
        assert_eq!(MutationPlan::parse("bogus"), None);
    }

    proptest! {
        #[test]
        fn mutation_is_reversible_and_monotone(seed in 0u64..500, start in 1usize..120) {
            let spec = synthetic_spec();
            let c = generate_synthetic(&spec, 120, seed);
            for kind in [MutationKind::Syn, MutationKind::Err] {
                let m = apply_mutation(&c, &spec, MutationPlan::new(kind, start));
                prop_assert_eq!(m.corpus.labels(), c.labels());
                prop_assert!(m.mutated_line_indices.iter().all(|&i| i >= start));
                let key = if kind == MutationKind::Syn { &spec.syn_key } else { &spec.err_key };
                let back: Vec<String> = m.corpus.lines()
                    .map(|l| replace_whole_token(l, key, &spec.event_key).unwrap_or_else(|| l.to_string()))
                    .collect();
                prop_assert_eq!(back, c.lines().map(str::to_string).collect::<Vec<_>>());
                let later = apply_mutation(&c, &spec, MutationPlan::new(kind, start + 10));
                prop_assert!(later.mutated_line_indices.iter().all(|i| m.mutated_line_indices.contains(i)));
            }
        }
    }
}
