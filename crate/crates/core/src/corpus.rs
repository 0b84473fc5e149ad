//! Log ingestion, ground-truth labeling, train/test splitting and synthetic
//! fixture generation.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Serialized form of [`Label::NoValue`] in CSV exports.
pub const NO_VALUE_LITERAL: &str = "__NO_VALUE__";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid event spec: {0}")]
    InvalidSpec(String),
    #[error("cannot parse event spec config: {0}")]
    Config(String),
    #[error("corpus too short: split needs {required} lines, corpus has {actual}")]
    TooShort { required: usize, actual: usize },
    #[error("records and labels differ in length ({records} vs {labels})")]
    LengthMismatch { records: usize, labels: usize },
    #[error("malformed label csv at row {row}: {reason}")]
    LabelCsv { row: usize, reason: String },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One raw log line. `index` is 1-based and counts from the start of the source file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub index: usize,
    pub raw_text: String,
}

/// Ground truth for one line: the event value, or the reserved "nothing to parse" marker.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    NoValue,
    Value(String),
}

impl Label {
    pub fn is_value(&self) -> bool {
        matches!(self, Label::Value(_))
    }

    pub fn as_value(&self) -> Option<&str> {
        match self {
            Label::Value(v) => Some(v),
            Label::NoValue => None,
        }
    }

    /// CSV form; the sentinel never collides with a real value because it is
    /// not produced by any value pattern over ordinary log text.
    pub fn to_csv_field(&self) -> &str {
        match self {
            Label::Value(v) => v,
            Label::NoValue => NO_VALUE_LITERAL,
        }
    }

    pub fn from_csv_field(field: &str) -> Label {
        if field == NO_VALUE_LITERAL {
            Label::NoValue
        } else {
            Label::Value(field.to_string())
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_csv_field())
    }
}

/// Per-dataset description of the event to parse and its two mutants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub dataset_name: String,
    pub event_key: String,
    /// Regular expression with exactly one capture group for the value.
    pub value_pattern: String,
    pub syn_key: String,
    pub err_key: String,
    pub expected_frequency: f64,
    /// Optional regular expression with one capture group selecting the
    /// message content after the timestamp/metadata columns. Used by the
    /// template miners; absent means the whole line is content.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_pattern: Option<String>,
}

impl EventSpec {
    pub fn from_toml_str(text: &str) -> Result<Self, CorpusError> {
        let spec: EventSpec = toml::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("event spec serializes")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let keys = [&self.event_key, &self.syn_key, &self.err_key];
        if keys.iter().any(|k| k.is_empty()) {
            return Err(CorpusError::InvalidSpec("event, syn and err keys must be non-empty".into()));
        }
        if self.event_key == self.syn_key || self.event_key == self.err_key || self.syn_key == self.err_key {
            return Err(CorpusError::InvalidSpec(format!(
                "keys must be pairwise distinct: {:?}, {:?}, {:?}",
                self.event_key, self.syn_key, self.err_key
            )));
        }
        if !(0.0..=1.0).contains(&self.expected_frequency) {
            return Err(CorpusError::InvalidSpec(format!(
                "expected_frequency {} outside [0, 1]",
                self.expected_frequency
            )));
        }
        single_group_regex(&self.value_pattern, "value_pattern")?;
        if let Some(p) = &self.content_pattern {
            single_group_regex(p, "content_pattern")?;
        }
        Ok(())
    }

    pub fn value_regex(&self) -> Result<Regex, CorpusError> {
        single_group_regex(&self.value_pattern, "value_pattern")
    }

    pub fn content_regex(&self) -> Result<Option<Regex>, CorpusError> {
        self.content_pattern
            .as_deref()
            .map(|p| single_group_regex(p, "content_pattern"))
            .transpose()
    }
}

fn single_group_regex(pattern: &str, what: &str) -> Result<Regex, CorpusError> {
    let re = Regex::new(pattern).map_err(|e| CorpusError::InvalidSpec(format!("{what}: {e}")))?;
    // captures_len counts the implicit whole-match group
    if re.captures_len() != 2 {
        return Err(CorpusError::InvalidSpec(format!(
            "{what} must have exactly one capture group, found {}",
            re.captures_len() - 1
        )));
    }
    Ok(re)
}

/// Returns the content portion of `line` selected by `content`, or the whole line.
pub fn content_of<'a>(content: Option<&Regex>, line: &'a str) -> &'a str {
    match content.and_then(|re| re.captures(line)).and_then(|c| c.get(1)) {
        Some(m) => m.as_str(),
        None => line,
    }
}

/// Log lines paired with their ground-truth labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    records: Vec<LogRecord>,
    labels: Vec<Label>,
}

impl LabeledCorpus {
    pub fn new(records: Vec<LogRecord>, labels: Vec<Label>) -> Result<Self, CorpusError> {
        if records.len() != labels.len() {
            return Err(CorpusError::LengthMismatch {
                records: records.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { records, labels })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LogRecord, &Label)> {
        self.records.iter().zip(self.labels.iter())
    }

    pub fn lines(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.raw_text.as_str())
    }

    /// Number of lines carrying a value.
    pub fn event_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_value()).count()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> LabeledCorpus {
        LabeledCorpus {
            records: self.records[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
        }
    }

    pub fn concat(&self, other: &LabeledCorpus) -> LabeledCorpus {
        let mut out = self.clone();
        out.records.extend(other.records.iter().cloned());
        out.labels.extend(other.labels.iter().cloned());
        out
    }

    pub(crate) fn with_texts(&self, texts: Vec<String>) -> LabeledCorpus {
        debug_assert_eq!(texts.len(), self.records.len());
        let records = self
            .records
            .iter()
            .zip(texts)
            .map(|(r, raw_text)| LogRecord { index: r.index, raw_text })
            .collect();
        LabeledCorpus {
            records,
            labels: self.labels.clone(),
        }
    }

    /// Writes `line_index,label` rows.
    pub fn write_labels_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["line_index", "label"])?;
        for (r, l) in self.iter() {
            w.write_record([r.index.to_string().as_str(), l.to_csv_field()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the raw lines, newline-terminated.
    pub fn write_log<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            out.write_all(r.raw_text.as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    /// Rebuilds a corpus from raw records and a `line_index,label` CSV. The CSV's
    /// indices replace the records' own, so a split re-read from disk keeps its
    /// original line numbers. Indices must be strictly increasing.
    pub fn from_labels_csv<R: std::io::Read>(mut records: Vec<LogRecord>, csv_in: R) -> Result<Self, CorpusError> {
        let mut rdr = csv::Reader::from_reader(csv_in);
        let mut labels = Vec::with_capacity(records.len());
        let mut prev = 0;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CorpusError::LabelCsv { row, reason: e.to_string() })?;
            let index: usize = rec
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CorpusError::LabelCsv { row, reason: "bad line_index".into() })?;
            let label = rec
                .get(1)
                .ok_or_else(|| CorpusError::LabelCsv { row, reason: "missing label".into() })?;
            if index <= prev {
                return Err(CorpusError::LabelCsv {
                    row,
                    reason: format!("line_index {index} is not increasing"),
                });
            }
            prev = index;
            match records.get_mut(row) {
                Some(r) => r.index = index,
                None => {
                    return Err(CorpusError::LabelCsv {
                        row,
                        reason: "more labels than log lines".into(),
                    })
                }
            }
            labels.push(Label::from_csv_field(label));
        }
        LabeledCorpus::new(records, labels)
    }
}

/// Reads up to `limit` lines. Invalid UTF-8 is replaced with U+FFFD.
pub fn load_corpus(path: impl AsRef<Path>, limit: usize) -> Result<Vec<LogRecord>, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    read_records(BufReader::new(file), limit).map_err(|e| io_err(path, e))
}

pub fn read_records<R: BufRead>(mut reader: R, limit: usize) -> std::io::Result<Vec<LogRecord>> {
    let mut out = Vec::new();
    let mut buf = Vec::new();
    while out.len() < limit {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        if buf.last() == Some(&b'\n') {
            buf.pop();
            if buf.last() == Some(&b'\r') {
                buf.pop();
            }
        }
        out.push(LogRecord {
            index: out.len() + 1,
            raw_text: String::from_utf8_lossy(&buf).into_owned(),
        });
    }
    Ok(out)
}

/// Labels each record with the first capture of the spec's value pattern.
pub fn label_corpus(records: &[LogRecord], spec: &EventSpec) -> Result<LabeledCorpus, CorpusError> {
    let re = spec.value_regex()?;
    let labels = records.iter().map(|r| label_line(&re, &r.raw_text)).collect();
    LabeledCorpus::new(records.to_vec(), labels)
}

pub(crate) fn label_line(re: &Regex, line: &str) -> Label {
    match re.captures(line).and_then(|c| c.get(1)) {
        Some(m) if !m.as_str().is_empty() => Label::Value(m.as_str().to_string()),
        _ => Label::NoValue,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self { train: 6000, test: 2000 }
    }
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.test
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train: LabeledCorpus,
    pub test: LabeledCorpus,
}

/// Deterministic prefix split: the first `sizes.train` lines train, the next
/// `sizes.test` lines test. Lines past `sizes.total()` are ignored.
pub fn split(corpus: &LabeledCorpus, sizes: SplitSizes) -> Result<CorpusSplit, CorpusError> {
    if corpus.len() < sizes.total() {
        return Err(CorpusError::TooShort {
            required: sizes.total(),
            actual: corpus.len(),
        });
    }
    Ok(CorpusSplit {
        train: corpus.slice(0..sizes.train),
        test: corpus.slice(sizes.train..sizes.total()),
    })
}

/// Source of generated values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValuePool {
    /// Integers drawn uniformly from `lo..hi`.
    Range { lo: u64, hi: u64 },
    /// Strings drawn uniformly from the list.
    List(Vec<String>),
}

impl ValuePool {
    fn draw(&self, rng: &mut ChaCha8Rng) -> String {
        match self {
            ValuePool::Range { lo, hi } => rng.gen_range(*lo..*hi).to_string(),
            ValuePool::List(items) => items[rng.gen_range(0..items.len())].clone(),
        }
    }
}

/// Shape of generated corpora. Defaults follow the HealthApp layout: a
/// calorie event, an altitude line with a near-identical key, and step-counter noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Fraction of event lines; `None` uses the spec's expected frequency.
    pub frequency: Option<f64>,
    pub distractor_frequency: f64,
    pub event_prefix: String,
    pub distractor_prefix: String,
    pub distractor_key: String,
    pub event_values: ValuePool,
    pub distractor_values: ValuePool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            frequency: None,
            distractor_frequency: 0.12,
            event_prefix: "calculateCaloriesWithCache".into(),
            distractor_prefix: "calculateAltitudeWithCache".into(),
            distractor_key: "totalAltitude".into(),
            event_values: ValuePool::Range { lo: 100_000, hi: 200_000 },
            distractor_values: ValuePool::Range { lo: 100, hi: 400 },
        }
    }
}

const COMPONENTS: [&str; 4] = ["Step_LSC", "Step_StandReportReceiver", "Step_StandStepCounter", "Step_SPUtills"];

/// Generates `n` HealthApp-style lines with the default [`SyntheticConfig`].
pub fn generate_synthetic(spec: &EventSpec, n: usize, seed: u64) -> LabeledCorpus {
    generate_synthetic_with(spec, &SyntheticConfig::default(), n, seed)
}

/// Event lines read `<ts>|Step_ExtSDM|<pid>|<event_prefix> <event_key>=<value>`;
/// exactly `round(n * frequency)` of them are placed at seeded positions.
pub fn generate_synthetic_with(spec: &EventSpec, cfg: &SyntheticConfig, n: usize, seed: u64) -> LabeledCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freq = cfg.frequency.unwrap_or(spec.expected_frequency).clamp(0.0, 1.0);
    let n_events = ((n as f64) * freq).round() as usize;
    let mut kind = vec![0u8; n];
    for i in sample(&mut rng, n, n_events.min(n)).into_iter() {
        kind[i] = 1;
    }
    let free: Vec<usize> = (0..n).filter(|&i| kind[i] == 0).collect();
    let n_distractors = (((n as f64) * cfg.distractor_frequency).round() as usize).min(free.len());
    for j in sample(&mut rng, free.len(), n_distractors).into_iter() {
        kind[free[j]] = 2;
    }

    let pid = 30_002_312u64;
    // 22:15:29.606 in milliseconds of the day
    let mut clock_ms: u64 = ((22 * 60 + 15) * 60 + 29) * 1000 + 606;
    let mut records = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, k) in kind.iter().enumerate() {
        clock_ms += rng.gen_range(0..25);
        let ts = format_timestamp(clock_ms);
        let (component, message, label) = match k {
            1 => {
                let v = cfg.event_values.draw(&mut rng);
                let msg = format!("{} {}={}", cfg.event_prefix, spec.event_key, v);
                ("Step_ExtSDM", msg, Label::Value(v))
            }
            2 => {
                let v = cfg.distractor_values.draw(&mut rng);
                let msg = format!("{} {}={}", cfg.distractor_prefix, cfg.distractor_key, v);
                ("Step_ExtSDM", msg, Label::NoValue)
            }
            _ => {
                let c = COMPONENTS[rng.gen_range(0..COMPONENTS.len())];
                (c, noise_message(&mut rng), Label::NoValue)
            }
        };
        records.push(LogRecord {
            index: i + 1,
            raw_text: format!("{ts}|{component}|{pid}|{message}"),
        });
        labels.push(label);
    }
    LabeledCorpus { records, labels }
}

fn format_timestamp(ms_of_day: u64) -> String {
    let ms = ms_of_day % 1000;
    let s = (ms_of_day / 1000) % 60;
    let m = (ms_of_day / 60_000) % 60;
    let h = (ms_of_day / 3_600_000) % 24;
    format!("20171223-{h}:{m:02}:{s:02}:{ms:03}")
}

fn noise_message(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..7) {
        0 => format!("onStandStepChanged {}", rng.gen_range(3000..4000)),
        1 => format!(
            "onExtend:1514038530000 {} {} {}",
            rng.gen_range(0..20),
            rng.gen_range(0..5),
            rng.gen_range(0..5)
        ),
        2 => "onReceive action: android.intent.action.SCREEN_ON".to_string(),
        3 => "processHandleBroadcastAction action:android.intent.action.SCREEN_ON".to_string(),
        4 => "flush sensor data".to_string(),
        5 => format!(
            "getTodayTotalDetailSteps = 1514038440000##{}##548365##8661##{}##27164404",
            rng.gen_range(6000..8000),
            rng.gen_range(12000..13000)
        ),
        _ => format!(
            "REPORT : {} {} 150089 {}",
            rng.gen_range(6000..8000),
            rng.gen_range(5000..5100),
            rng.gen_range(200..300)
        ),
    }
}

/// Event spec matching the default synthetic layout.
pub fn synthetic_spec() -> EventSpec {
    EventSpec {
        dataset_name: "synthetic".into(),
        event_key: "totalCalories".into(),
        value_pattern: r"totalCalories=(\d+)".into(),
        syn_key: "totalCal".into(),
        err_key: "totalCallory".into(),
        expected_frequency: 0.121,
        content_pattern: Some(r"^[^|]*\|[^|]*\|[^|]*\|(.*)$".into()),
    }
}

/// Train/test corpora with disjoint event values. Training events draw from
/// 100000..150000; test events draw from a fixed list of `test_pool` values
/// that also fill the training distractor lines, so every test value is in
/// the training vocabulary but never a training label. Test indices continue
/// after the training lines.
pub fn disjoint_value_split(spec: &EventSpec, n_train: usize, n_test: usize, test_pool: usize, seed: u64) -> CorpusSplit {
    let pool: Vec<String> = (0..test_pool.max(1)).map(|i| (150_000 + 1_999 * i).to_string()).collect();
    let train_cfg = SyntheticConfig {
        event_values: ValuePool::Range { lo: 100_000, hi: 150_000 },
        distractor_values: ValuePool::List(pool.clone()),
        ..SyntheticConfig::default()
    };
    let test_cfg = SyntheticConfig {
        event_values: ValuePool::List(pool),
        ..SyntheticConfig::default()
    };
    let train = generate_synthetic_with(spec, &train_cfg, n_train, seed);
    let test = generate_synthetic_with(spec, &test_cfg, n_test, seed.wrapping_add(1));
    let records = test
        .records
        .iter()
        .map(|r| LogRecord {
            index: n_train + r.index,
            raw_text: r.raw_text.clone(),
        })
        .collect();
    CorpusSplit {
        test: LabeledCorpus {
            records,
            labels: test.labels,
        },
        train,
    }
}
