//! Normalization, tokenization, vocabulary construction and fixed-length encoding.
//!
//! The same [`normalize`] is applied to log lines and to label values, so a
//! value appearing in both maps to one id.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Label, LabeledCorpus};
use crate::nncore::Tensor;

pub const PAD_ID: u32 = 0;
pub const OOV_ID: u32 = 1;
pub const NO_VALUE_ID: u32 = 2;
pub const RESERVED: [&str; 3] = ["__PAD__", "__OOV__", "__NO_VALUE__"];
pub const DEFAULT_MAX_VOCAB: usize = 10_000;

const STOP_WORDS: &str = include_str!("../data/stopwords_en.txt");
const LEMMA_EXCEPTIONS: &str = include_str!("../data/lemma_exceptions.txt");
const LEMMA_LEXICON: &str = include_str!("../data/lemma_lexicon.txt");

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("label {label:?} normalizes to {count} tokens; labels must be a single token")]
    LabelTokens { label: String, count: usize },
    #[error("no training line carries a value for event key {event_key:?}")]
    NoEventLines { event_key: String },
    #[error("token id {id} out of range for vocabulary size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("encoded line has length {actual}, expected {expected}")]
    Length { expected: usize, actual: usize },
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(what: &'static str, reason: impl ToString) -> PrepError {
    PrepError::Format {
        what,
        reason: reason.to_string(),
    }
}

/// Rule-based lemmatizer: exception table first, then suffix rules whose
/// result must be a known base form.
#[derive(Clone, Debug, Default)]
pub struct Lemmatizer {
    exceptions: HashMap<String, String>,
    lexicon: HashSet<String>,
}

const SUFFIX_RULES: &[(&str, &[&str])] = &[
    ("ies", &["y"]),
    ("es", &[""]),
    ("s", &[""]),
    ("ing", &["", "e"]),
    ("ed", &["", "e"]),
    ("est", &["", "e"]),
    ("er", &["", "e"]),
];

impl Lemmatizer {
    pub fn bundled() -> Self {
        Self::from_tables(LEMMA_EXCEPTIONS, LEMMA_LEXICON)
    }

    /// `exceptions`: `form lemma` per line; `lexicon`: whitespace-separated base
    /// forms. Lines starting with `#` are comments in both.
    pub fn from_tables(exceptions: &str, lexicon: &str) -> Self {
        let exceptions = exceptions
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| {
                let mut it = l.split_whitespace();
                Some((it.next()?.to_string(), it.next()?.to_string()))
            })
            .collect();
        let lexicon = lexicon
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(str::split_whitespace)
            .map(str::to_string)
            .collect();
        Self { exceptions, lexicon }
    }

    /// Lemmatizes a lowercase alphabetic word; anything else passes through.
    pub fn lemma(&self, word: &str) -> String {
        if let Some(l) = self.exceptions.get(word) {
            return l.clone();
        }
        if self.lexicon.contains(word) || !word.bytes().all(|b| b.is_ascii_lowercase()) {
            return word.to_string();
        }
        for (suffix, endings) in SUFFIX_RULES {
            let Some(stem) = word.strip_suffix(suffix) else { continue };
            if stem.len() < 2 || (*suffix == "s" && stem.ends_with('s')) {
                continue;
            }
            for e in *endings {
                let cand = format!("{stem}{e}");
                if self.lexicon.contains(&cand) {
                    return cand;
                }
            }
            // doubled final consonant: stopped -> stop
            let b = stem.as_bytes();
            if (*suffix == "ing" || *suffix == "ed") && b.len() >= 3 && b[b.len() - 1] == b[b.len() - 2] {
                let cand = &stem[..stem.len() - 1];
                if self.lexicon.contains(cand) {
                    return cand.to_string();
                }
            }
        }
        word.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct PrepConfig {
    /// Sequence length L used by [`PrepConfig::encode_line`].
    pub max_len: usize,
    pub stop_words: HashSet<String>,
    pub lemmatizer: Lemmatizer,
    pub max_vocab: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        Self {
            max_len: 32,
            stop_words: STOP_WORDS
                .lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(str::to_string)
                .collect(),
            lemmatizer: Lemmatizer::bundled(),
            max_vocab: DEFAULT_MAX_VOCAB,
        }
    }
}

impl PrepConfig {
    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    /// Normalizes, encodes and pads one raw line.
    pub fn encode_line(&self, raw: &str, vocab: &Vocabulary) -> Vec<u32> {
        pad_truncate(&encode(&normalize(raw, self), vocab), self.max_len)
    }
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || matches!(c, '|' | '=' | ':' | ',' | '#' | '(' | ')' | '[' | ']')
}

pub fn normalize(raw: &str, cfg: &PrepConfig) -> Vec<String> {
    raw.split(is_separator)
        .filter(|t| !t.is_empty())
        .filter(|t| !cfg.stop_words.contains(&t.to_lowercase()))
        .filter_map(|t| {
            let cleaned: String = t
                .chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect();
            (!cleaned.is_empty()).then(|| cfg.lemmatizer.lemma(&cleaned))
        })
        .collect()
}

/// Normalized single-token form of a label; `None` for [`Label::NoValue`].
pub fn label_token(label: &Label, cfg: &PrepConfig) -> Result<Option<String>, PrepError> {
    let Label::Value(v) = label else { return Ok(None) };
    let mut toks = normalize(v, cfg);
    if toks.len() != 1 {
        return Err(PrepError::LabelTokens {
            label: v.clone(),
            count: toks.len(),
        });
    }
    Ok(toks.pop())
}

/// Frequency-ranked token map with reserved ids 0..3.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    frequencies: Vec<u64>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, frequencies: Vec<u64>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            frequencies,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, id: u32) -> Option<u64> {
        self.frequencies.get(id as usize).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Label id for training targets; unseen values fall back to OOV.
    pub fn label_id(&self, token: Option<&str>) -> u32 {
        token.map_or(NO_VALUE_ID, |t| self.id(t))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["token", "id", "frequency"])?;
        for (i, (t, f)) in self.tokens.iter().zip(&self.frequencies).enumerate() {
            w.write_record([t.as_str(), &i.to_string(), &f.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self, PrepError> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut tokens = Vec::new();
        let mut freqs = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| format_err("vocabulary csv", e))?;
            let (Some(tok), Some(id), Some(freq)) = (rec.get(0), rec.get(1), rec.get(2)) else {
                return Err(format_err("vocabulary csv", format!("row {row} has fewer than 3 fields")));
            };
            if id.parse::<usize>().ok() != Some(row) {
                return Err(format_err("vocabulary csv", format!("row {row} has id {id}")));
            }
            tokens.push(tok.to_string());
            freqs.push(freq.parse().map_err(|e| format_err("vocabulary csv", e))?);
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(format_err("vocabulary csv", "missing reserved entries"));
        }
        Ok(Self::from_parts(tokens, freqs))
    }

    /// SHA-256 of the CSV export, used to tie checkpoints to their vocabulary.
    pub fn content_hash(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        hex::encode(Sha256::digest(&buf))
    }
}

pub fn build_vocabulary(train_lines: &[Vec<String>], label_tokens: &[String]) -> Vocabulary {
    build_vocabulary_capped(train_lines, label_tokens, DEFAULT_MAX_VOCAB)
}

/// Label tokens form a forced first tier (frequency order, ties by first
/// appearance in `label_tokens`); the remaining tokens follow by frequency,
/// ties by first occurrence in `train_lines`. At most `cap` non-reserved entries.
pub fn build_vocabulary_capped(train_lines: &[Vec<String>], label_tokens: &[String], cap: usize) -> Vocabulary {
    let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
    let mut order = 0usize;
    for tok in train_lines.iter().flatten() {
        let e = counts.entry(tok.as_str()).or_insert_with(|| {
            order += 1;
            (0, order)
        });
        e.0 += 1;
    }
    let reserved: HashSet<&str> = RESERVED.into_iter().collect();
    let mut forced: Vec<(&str, u64, usize)> = Vec::new();
    let mut seen = HashSet::new();
    for (pos, t) in label_tokens.iter().enumerate() {
        if !reserved.contains(t.as_str()) && seen.insert(t.as_str()) {
            forced.push((t, counts.get(t.as_str()).map_or(0, |c| c.0), pos));
        }
    }
    let mut rest: Vec<(&str, u64, usize)> = counts
        .iter()
        .filter(|(t, _)| !seen.contains(*t) && !reserved.contains(*t))
        .map(|(t, (c, o))| (*t, *c, *o))
        .collect();
    let by_rank = |a: &(&str, u64, usize), b: &(&str, u64, usize)| b.1.cmp(&a.1).then(a.2.cmp(&b.2));
    forced.sort_by(by_rank);
    rest.sort_by(by_rank);

    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    let mut freqs = vec![0u64; RESERVED.len()];
    for (t, c, _) in forced.into_iter().chain(rest).take(cap) {
        tokens.push(t.to_string());
        freqs.push(c);
    }
    Vocabulary::from_parts(tokens, freqs)
}

pub fn encode(tokens: &[String], vocab: &Vocabulary) -> Vec<u32> {
    tokens.iter().map(|t| vocab.id(t)).collect()
}

/// Right-pads with PAD or truncates the tail to exactly `len` ids.
pub fn pad_truncate(ids: &[u32], len: usize) -> Vec<u32> {
    let mut out: Vec<u32> = ids.iter().copied().take(len).collect();
    out.resize(len, PAD_ID);
    out
}

/// Longest token count over lines that carry a value.
pub fn compute_max_len(tokens: &[Vec<String>], labels: &[Label], event_key: &str) -> Result<usize, PrepError> {
    tokens
        .iter()
        .zip(labels)
        .filter(|(_, l)| l.is_value())
        .map(|(t, _)| t.len())
        .max()
        .filter(|&l| l > 0)
        .ok_or_else(|| PrepError::NoEventLines {
            event_key: event_key.to_string(),
        })
}

/// Dense `[L, V]` one-hot matrix.
pub fn one_hot(ids: &[u32], vocab_size: usize) -> Result<Tensor, PrepError> {
    let mut t = Tensor::zeros(&[ids.len(), vocab_size]);
    for (row, &id) in ids.iter().enumerate() {
        if id as usize >= vocab_size {
            return Err(PrepError::IdOutOfRange { id, size: vocab_size });
        }
        t.data_mut()[row * vocab_size + id as usize] = 1.0;
    }
    Ok(t)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    pub label_id: u32,
}

/// Encoded corpus with its sequence length and vocabulary size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub max_len: usize,
    pub vocab_size: usize,
    pub examples: Vec<EncodedExample>,
}

impl EncodedDataset {
    /// Writes a `L,V` header row, its values, then `label_id,t1..tL` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "L,V")?;
        writeln!(out, "{},{}", self.max_len, self.vocab_size)?;
        let cols: Vec<String> = (1..=self.max_len).map(|i| format!("t{i}")).collect();
        writeln!(out, "label_id,{}", cols.join(","))?;
        for ex in &self.examples {
            write!(out, "{}", ex.label_id)?;
            for id in &ex.ids {
                write!(out, ",{id}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self, PrepError> {
        let mut lines = input.lines();
        let mut next = |what: &'static str| -> Result<String, PrepError> {
            lines
                .next()
                .ok_or_else(|| format_err("encoded csv", format!("missing {what}")))?
                .map_err(PrepError::from)
        };
        if next("header")? != "L,V" {
            return Err(format_err("encoded csv", "expected L,V header"));
        }
        let dims = next("dimensions")?;
        let (l, v) = dims
            .split_once(',')
            .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)))
            .ok_or_else(|| format_err("encoded csv", "bad dimensions row"))?;
        next("column header")?;
        let mut examples = Vec::new();
        while let Ok(line) = next("row") {
            if line.is_empty() {
                continue;
            }
            let nums: Vec<u32> = line
                .split(',')
                .map(|s| s.parse().map_err(|e| format_err("encoded csv", e)))
                .collect::<Result<_, _>>()?;
            if nums.len() != l + 1 {
                return Err(PrepError::Length {
                    expected: l,
                    actual: nums.len().saturating_sub(1),
                });
            }
            if let Some(&id) = nums.iter().find(|&&id| id as usize >= v) {
                return Err(PrepError::IdOutOfRange { id, size: v });
            }
            examples.push(EncodedExample {
                label_id: nums[0],
                ids: nums[1..].to_vec(),
            });
        }
        Ok(Self {
            max_len: l,
            vocab_size: v,
            examples,
        })
    }
}

/// Output of [`prepare`]: a fitted vocabulary with encoded train data.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub cfg: PrepConfig,
    pub vocab: Vocabulary,
    pub train: EncodedDataset,
}

/// Fits vocabulary and L on a training corpus and encodes it.
pub fn prepare(train: &LabeledCorpus, event_key: &str, base: PrepConfig) -> Result<Prepared, PrepError> {
    let tokens: Vec<Vec<String>> = train.lines().map(|l| normalize(l, &base)).collect();
    let label_toks: Vec<Option<String>> = train
        .labels()
        .iter()
        .map(|l| label_token(l, &base))
        .collect::<Result<_, _>>()?;
    let max_len = compute_max_len(&tokens, train.labels(), event_key)?;
    let forced: Vec<String> = label_toks.iter().flatten().cloned().collect();
    let vocab = build_vocabulary_capped(&tokens, &forced, base.max_vocab);
    let cfg = base.with_max_len(max_len);
    let examples = tokens
        .iter()
        .zip(&label_toks)
        .map(|(t, l)| EncodedExample {
            ids: pad_truncate(&encode(t, &vocab), max_len),
            label_id: vocab.label_id(l.as_deref()),
        })
        .collect();
    Ok(Prepared {
        train: EncodedDataset {
            max_len,
            vocab_size: vocab.len(),
            examples,
        },
        cfg,
        vocab,
    })
}

/// Encodes an evaluation corpus with an existing vocabulary. Labels that fail
/// single-token normalization are an error, as at training time.
pub fn encode_corpus(corpus: &LabeledCorpus, vocab: &Vocabulary, cfg: &PrepConfig) -> Result<EncodedDataset, PrepError> {
    let examples = corpus
        .iter()
        .map(|(r, l)| {
            Ok(EncodedExample {
                ids: cfg.encode_line(&r.raw_text, vocab),
                label_id: vocab.label_id(label_token(l, cfg)?.as_deref()),
            })
        })
        .collect::<Result<_, PrepError>>()?;
    Ok(EncodedDataset {
        max_len: cfg.max_len,
        vocab_size: vocab.len(),
        examples,
    })
}
