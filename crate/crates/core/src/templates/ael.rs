use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{masked_tokens, EventTemplate, TemplateError, WILDCARD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AelConfig {
    /// Merge bound k on differing literal positions.
    pub max_differing_tokens: usize,
}

impl Default for AelConfig {
    fn default() -> Self {
        Self { max_differing_tokens: 1 }
    }
}

/// Positions where the two token lists differ. A wildcard only equals a
/// wildcard, so a template never absorbs a line whose literals it lacks.
fn differing(template: &[String], tokens: &[String]) -> usize {
    template.iter().zip(tokens).filter(|(t, l)| t != l).count()
}

fn merge_into(template: &mut [String], tokens: &[String]) {
    for (t, l) in template.iter_mut().zip(tokens) {
        if t != l {
            *t = WILDCARD.to_string();
        }
    }
}

/// Bins lines by (token count, masked-token count), then merges templates
/// within a bin while they differ in at most k literal positions.
pub fn ael_fit(lines: &[&str], cfg: &AelConfig) -> Result<Vec<EventTemplate>, TemplateError> {
    if cfg.max_differing_tokens == 0 {
        return Err(TemplateError::Config("max_differing_tokens must be at least 1".into()));
    }
    let k = cfg.max_differing_tokens;
    // bin key -> (first-seen rank, templates)
    let mut bins: BTreeMap<(usize, usize), (usize, Vec<EventTemplate>)> = BTreeMap::new();
    for line in lines {
        let tokens = masked_tokens(line);
        if tokens.is_empty() {
            continue;
        }
        let key = (tokens.len(), tokens.iter().filter(|t| t.contains(WILDCARD)).count());
        let rank = bins.len();
        let (_, bin) = bins.entry(key).or_insert_with(|| (rank, Vec::new()));
        match bin.iter_mut().find(|t| differing(&t.tokens, &tokens) <= k) {
            Some(t) => {
                merge_into(&mut t.tokens, &tokens);
                t.support += 1;
            }
            None => bin.push(EventTemplate::new(tokens, 1)?),
        }
    }
    let mut ordered: Vec<(usize, Vec<EventTemplate>)> = bins.into_values().collect();
    ordered.sort_by_key(|b| b.0);
    let mut out = Vec::new();
    for (_, mut bin) in ordered {
        // merging can make earlier templates mergeable with each other
        loop {
            let pair = (0..bin.len()).find_map(|i| {
                (i + 1..bin.len())
                    .find(|&j| differing(&bin[i].tokens, &bin[j].tokens) <= k)
                    .map(|j| (i, j))
            });
            let Some((i, j)) = pair else { break };
            let other = bin.remove(j);
            merge_into(&mut bin[i].tokens, &other.tokens);
            bin[i].support += other.support;
        }
        out.extend(bin);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(ts: &[EventTemplate]) -> Vec<String> {
        ts.iter().map(EventTemplate::text).collect()
    }

    #[test]
    fn identical_lines_all_literal() {
        let ts = ael_fit(&["flush sensor data"; 3], &AelConfig::default()).unwrap();
        assert_eq!(texts(&ts), ["flush sensor data"]);
        assert_eq!(ts[0].support, 3);
    }

    #[test]
    fn two_line_merge() {
        let ts = ael_fit(&["a b 1", "a b 2"], &AelConfig::default()).unwrap();
        assert_eq!(texts(&ts), ["a b <*>"]);
        let ts = ael_fit(&["a b c", "a b d"], &AelConfig::default()).unwrap();
        assert_eq!(texts(&ts), ["a b <*>"]);
    }

    #[test]
    fn wildcards_do_not_absorb_literals() {
        let lines = ["onStandStepChanged 3537", "calculateCaloriesWithCache totalCalories=12"];
        let ts = ael_fit(&lines, &AelConfig::default()).unwrap();
        assert_eq!(texts(&ts), ["onStandStepChanged <*>", "calculateCaloriesWithCache totalCalories=<*>"]);
        let ts = ael_fit(&["foo a", "foo b", "bar c"], &AelConfig::default()).unwrap();
        assert_eq!(texts(&ts), ["foo <*>", "bar c"]);
    }

    #[test]
    fn token_counts_never_merge() {
        let ts = ael_fit(&["a b c", "a b c d"], &AelConfig::default()).unwrap();
        assert_eq!(ts.len(), 2);
    }

    #[test]
    fn k_bounds_merging() {
        let ts = ael_fit(&["a b c", "a x y"], &AelConfig::default()).unwrap();
        assert_eq!(ts.len(), 2);
        let ts = ael_fit(&["a b c", "a x y"], &AelConfig { max_differing_tokens: 2 }).unwrap();
        assert_eq!(texts(&ts), ["a <*> <*>"]);
        assert!(ael_fit(&["a"], &AelConfig { max_differing_tokens: 0 }).is_err());
    }

    proptest! {
        #[test]
        fn merging_keeps_wildcards_and_covers_lines(lines in prop::collection::vec(
            prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "7", "x9", "<*>"]), 3), 1..25)) {
            let mut t: Vec<String> = lines[0].iter().map(|s| s.to_string()).collect();
            for l in &lines[1..] {
                let l: Vec<String> = l.iter().map(|s| s.to_string()).collect();
                let before = t.clone();
                merge_into(&mut t, &l);
                for (old, new) in before.iter().zip(&t) {
                    prop_assert!(old != WILDCARD || new == WILDCARD);
                }
                prop_assert!(t.iter().zip(&l).all(|(a, b)| a == b || a == WILDCARD));
            }

            let joined: Vec<String> = lines.iter().map(|l| l.join(" ")).collect();
            let refs: Vec<&str> = joined.iter().map(String::as_str).collect();
            let fitted = ael_fit(&refs, &AelConfig::default()).unwrap();
            let regexes: Vec<_> = fitted.iter().map(|t| super::super::template_to_regex(t).unwrap()).collect();
            for line in &refs {
                prop_assert!(regexes.iter().any(|r| r.is_match(line)), "{line} uncovered by {:?}", texts(&fitted));
            }
            for t in &fitted {
                prop_assert!(t.tokens.iter().all(|tok| !tok.chars().all(|c| c.is_ascii_digit())));
            }
        }
    }
}
