use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{masked_tokens, EventTemplate, TemplateError, WILDCARD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrainConfig {
    pub tree_depth: usize,
    pub similarity_threshold: f64,
    pub max_children: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        Self {
            tree_depth: 4,
            similarity_threshold: 0.4,
            max_children: 100,
        }
    }
}

impl DrainConfig {
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.tree_depth < 2 {
            return Err(TemplateError::Config(format!("tree_depth {} < 2", self.tree_depth)));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(TemplateError::Config(format!(
                "similarity_threshold {} outside (0, 1)",
                self.similarity_threshold
            )));
        }
        if self.max_children == 0 {
            return Err(TemplateError::Config("max_children must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Node {
    children: BTreeMap<String, Node>,
    groups: Vec<usize>,
}

fn route<'n>(mut node: &'n mut Node, tokens: &[String], cfg: &DrainConfig) -> &'n mut Node {
    for tok in tokens.iter().take(cfg.tree_depth - 2) {
        let key = if tok.contains(WILDCARD) { WILDCARD } else { tok.as_str() };
        let key = if node.children.contains_key(key) || node.children.len() < cfg.max_children {
            key
        } else {
            WILDCARD
        };
        node = node.children.entry(key.to_string()).or_default();
    }
    node
}

/// Fraction of positions where the template literal equals the token, and
/// the number of wildcard positions.
fn similarity(template: &[String], tokens: &[String]) -> (f64, usize) {
    let mut same = 0;
    let mut params = 0;
    for (t, l) in template.iter().zip(tokens) {
        if t == WILDCARD {
            params += 1;
        } else if t == l {
            same += 1;
        }
    }
    (same as f64 / template.len() as f64, params)
}

/// Fixed-depth parse-tree miner. Lines with no tokens are skipped.
pub fn drain_fit(lines: &[&str], cfg: &DrainConfig) -> Result<Vec<EventTemplate>, TemplateError> {
    cfg.validate()?;
    let mut by_len: BTreeMap<usize, Node> = BTreeMap::new();
    let mut groups: Vec<EventTemplate> = Vec::new();
    for line in lines {
        let tokens = masked_tokens(line);
        if tokens.is_empty() {
            continue;
        }
        let leaf = route(by_len.entry(tokens.len()).or_default(), &tokens, cfg);
        let mut best: Option<(usize, f64, usize)> = None;
        for &gi in &leaf.groups {
            let (sim, params) = similarity(&groups[gi].tokens, &tokens);
            if best.is_none_or(|(_, s, p)| sim > s || (sim == s && params > p)) {
                best = Some((gi, sim, params));
            }
        }
        match best {
            Some((gi, sim, _)) if sim >= cfg.similarity_threshold => {
                let g = &mut groups[gi];
                for (t, l) in g.tokens.iter_mut().zip(&tokens) {
                    if t != l {
                        *t = WILDCARD.to_string();
                    }
                }
                g.support += 1;
            }
            _ => {
                leaf.groups.push(groups.len());
                groups.push(EventTemplate::new(tokens, 1)?);
            }
        }
    }
    Ok(groups)
}
