//! Template-miner baselines (Drain, AEL) and template-based value extraction.

mod ael;
mod drain;

use std::fmt;
use std::io::Write;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{content_of, CorpusError, EventSpec, Label, LabeledCorpus};
use crate::mutator::MutatedCorpus;

pub use ael::{ael_fit, AelConfig};
pub use drain::{drain_fit, DrainConfig};

/// Wildcard marker in template tokens.
pub const WILDCARD: &str = "<*>";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("invalid template miner configuration: {0}")]
    Config(String),
    #[error("template must have at least one token")]
    Empty,
    #[error("cannot compile template {template:?}: {source}")]
    Regex {
        template: String,
        #[source]
        source: regex::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Tokens are literals or [`WILDCARD`]; a literal may also embed wildcards
/// where digit runs were masked, e.g. `(uid=<*>)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTemplate {
    pub tokens: Vec<String>,
    pub support: usize,
}

impl EventTemplate {
    pub fn new(tokens: Vec<String>, support: usize) -> Result<Self, TemplateError> {
        if tokens.is_empty() {
            return Err(TemplateError::Empty);
        }
        Ok(Self {
            tokens,
            support: support.max(1),
        })
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    /// Number of capture slots, counting embedded wildcards.
    pub fn wildcard_count(&self) -> usize {
        self.tokens.iter().map(|t| t.matches(WILDCARD).count()).sum()
    }

    fn literal_chars(&self) -> usize {
        self.tokens.iter().map(|t| t.replace(WILDCARD, "").len()).sum()
    }
}

impl fmt::Display for EventTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Replaces every run of ASCII digits with the wildcard marker.
pub fn mask_digits(token: &str) -> String {
    let mut out = String::with_capacity(token.len());
    let mut in_run = false;
    for c in token.chars() {
        if c.is_ascii_digit() {
            if !in_run {
                out.push_str(WILDCARD);
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    out
}

/// Whitespace tokens with digit runs masked.
pub fn masked_tokens(content: &str) -> Vec<String> {
    content.split_whitespace().map(mask_digits).collect()
}

/// Anchored pattern: literals escaped, tokens separated by `\s+`, each
/// wildcard a non-greedy `(\S+?)` group.
pub fn template_to_regex(t: &EventTemplate) -> Result<Regex, TemplateError> {
    let body: Vec<String> = t
        .tokens
        .iter()
        .map(|tok| {
            tok.split(WILDCARD)
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(r"(\S+?)")
        })
        .collect();
    let pattern = format!(r"^\s*{}\s*$", body.join(r"\s+"));
    Regex::new(&pattern).map_err(|source| TemplateError::Regex {
        template: t.text(),
        source,
    })
}

/// Writes one `tokens<TAB>support` line per template.
pub fn write_templates<W: Write>(templates: &[EventTemplate], mut out: W) -> std::io::Result<()> {
    for t in templates {
        writeln!(out, "{}\t{}", t.text(), t.support)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Miner {
    Drain(DrainConfig),
    Ael(AelConfig),
}

impl Miner {
    pub fn name(&self) -> &'static str {
        match self {
            Miner::Drain(_) => "drain",
            Miner::Ael(_) => "ael",
        }
    }

    pub fn fit(&self, contents: &[&str]) -> Result<Vec<EventTemplate>, TemplateError> {
        match self {
            Miner::Drain(c) => drain_fit(contents, c),
            Miner::Ael(c) => ael_fit(contents, c),
        }
    }
}

/// Output of [`TemplateParser::extract`].
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub labels: Vec<Label>,
    /// Lines no template matched; they are labeled NO_VALUE.
    pub unmatched: usize,
}

/// Mined templates plus, for each, the wildcard holding the event value
/// (chosen by agreement with ground truth on the fitting corpus).
#[derive(Clone, Debug)]
pub struct TemplateParser {
    pub miner: Miner,
    pub templates: Vec<EventTemplate>,
    pub value_slots: Vec<Option<usize>>,
    regexes: Vec<Regex>,
    /// Template indices, most specific first.
    order: Vec<usize>,
    content: Option<Regex>,
}

impl TemplateParser {
    pub fn fit(corpus: &LabeledCorpus, spec: &EventSpec, miner: &Miner) -> Result<Self, TemplateError> {
        let content = spec.content_regex()?;
        let contents: Vec<&str> = corpus.lines().map(|l| content_of(content.as_ref(), l)).collect();
        let templates = miner.fit(&contents)?;
        let regexes = templates.iter().map(template_to_regex).collect::<Result<Vec<_>, _>>()?;
        let mut order: Vec<usize> = (0..templates.len()).collect();
        order.sort_by_key(|&i| {
            (
                std::cmp::Reverse(templates[i].literal_chars()),
                templates[i].wildcard_count(),
            )
        });
        let mut parser = Self {
            miner: miner.clone(),
            value_slots: vec![None; templates.len()],
            templates,
            regexes,
            order,
            content,
        };

        // agree[t][w]: lines of template t whose wildcard w equals the truth
        let mut agree: Vec<Vec<usize>> = parser.templates.iter().map(|t| vec![0; t.wildcard_count()]).collect();
        let mut valued = vec![0usize; parser.templates.len()];
        for (c, label) in contents.iter().zip(corpus.labels()) {
            let Label::Value(truth) = label else { continue };
            let Some((ti, caps)) = parser.match_content(c) else { continue };
            valued[ti] += 1;
            for (w, cap) in caps.iter().enumerate() {
                if cap == truth {
                    agree[ti][w] += 1;
                }
            }
        }
        for (ti, counts) in agree.iter().enumerate() {
            let best = counts
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)));
            if let Some((w, &n)) = best {
                if n > 0 && 2 * n >= valued[ti] {
                    parser.value_slots[ti] = Some(w);
                }
            }
        }
        Ok(parser)
    }

    fn match_content(&self, content: &str) -> Option<(usize, Vec<String>)> {
        self.order.iter().find_map(|&i| {
            self.regexes[i].captures(content).map(|c| {
                let caps = c.iter().skip(1).map(|m| m.map_or("", |m| m.as_str()).to_string()).collect();
                (i, caps)
            })
        })
    }

    /// Index of the template matching a raw line, if any.
    pub fn template_of(&self, line: &str) -> Option<usize> {
        self.match_content(content_of(self.content.as_ref(), line)).map(|m| m.0)
    }

    pub fn extract<'a>(&self, lines: impl IntoIterator<Item = &'a str>) -> Extraction {
        let mut unmatched = 0;
        let labels = lines
            .into_iter()
            .map(|line| match self.match_content(content_of(self.content.as_ref(), line)) {
                None => {
                    unmatched += 1;
                    Label::NoValue
                }
                Some((ti, caps)) => match self.value_slots[ti] {
                    Some(w) if !caps[w].is_empty() => Label::Value(caps[w].clone()),
                    _ => Label::NoValue,
                },
            })
            .collect();
        if unmatched > 0 {
            log::debug!("{unmatched} lines matched no {} template", self.miner.name());
        }
        Extraction { labels, unmatched }
    }
}

/// Labels for `lines` from templates fitted elsewhere.
pub fn extract_values<'a>(lines: impl IntoIterator<Item = &'a str>, parser: &TemplateParser) -> Vec<Label> {
    parser.extract(lines).labels
}

/// Fits an independent parser on each variant's own lines.
pub fn refit_per_variant(
    variants: &[MutatedCorpus],
    spec: &EventSpec,
    miner: &Miner,
) -> Result<Vec<TemplateParser>, TemplateError> {
    variants.iter().map(|v| TemplateParser::fit(&v.corpus, spec, miner)).collect()
}
