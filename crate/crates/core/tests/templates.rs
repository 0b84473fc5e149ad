use flexlog::corpus::{generate_synthetic, label_corpus, load_corpus, synthetic_spec, EventSpec, LabeledCorpus};
use flexlog::mutator::{apply_mutation, variant_matrix};
use flexlog::templates::{template_to_regex, AelConfig, DrainConfig, Miner, TemplateParser, WILDCARD};
use flexlog::{MutationKind, MutationPlan};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/linux_fixture.log");

fn linux_spec() -> EventSpec {
    EventSpec::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/linux.toml")).unwrap()
}

fn linux_corpus() -> LabeledCorpus {
    label_corpus(&load_corpus(FIXTURE, usize::MAX).unwrap(), &linux_spec()).unwrap()
}

fn miners() -> [Miner; 2] {
    [Miner::Drain(DrainConfig::default()), Miner::Ael(AelConfig::default())]
}

#[test]
fn drain_merges_renamed_linux_key() {
    let spec = linux_spec();
    let corpus = linux_corpus();
    assert!(corpus.event_count() > 10);
    let mutated = apply_mutation(&corpus, &spec, MutationPlan::new(MutationKind::Syn, 200));
    assert!(!mutated.mutated_line_indices.is_empty());
    let p = TemplateParser::fit(&mutated.corpus, &spec, &Miner::Drain(DrainConfig::default())).unwrap();
    let texts: Vec<String> = p.templates.iter().map(|t| t.text()).collect();
    assert!(
        texts.iter().any(|t| t == "session opened for <*> <*> by (uid=<*>)"),
        "{texts:#?}"
    );

    let clean = TemplateParser::fit(&corpus, &spec, &Miner::Drain(DrainConfig::default())).unwrap();
    let texts: Vec<String> = clean.templates.iter().map(|t| t.text()).collect();
    assert!(texts.iter().any(|t| t == "session opened for user <*> by (uid=<*>)"), "{texts:#?}");
}

fn fitted_corpora() -> Vec<(EventSpec, LabeledCorpus)> {
    let mut out = Vec::new();
    let linux = linux_spec();
    let lc = linux_corpus();
    for v in variant_matrix(&lc, &linux) {
        out.push((linux.clone(), v.corpus));
    }
    let syn = synthetic_spec();
    let sc = generate_synthetic(&syn, 1200, 5);
    for v in variant_matrix(&sc, &syn) {
        out.push((syn.clone(), v.corpus));
    }
    out
}

#[test]
fn template_regexes_round_trip_on_fitted_corpora() {
    for (spec, corpus) in fitted_corpora() {
        for miner in miners() {
            let p = TemplateParser::fit(&corpus, &spec, &miner).unwrap();
            for line in corpus.lines() {
                assert!(p.template_of(line).is_some(), "{} left {line:?} unmatched", miner.name());
            }
            for t in &p.templates {
                let re = template_to_regex(t).unwrap();
                assert_eq!(re.captures_len() - 1, t.wildcard_count());
                let mut fills = Vec::new();
                let concrete: Vec<String> = t
                    .tokens
                    .iter()
                    .map(|tok| {
                        let mut s = String::new();
                        for (i, part) in tok.split(WILDCARD).enumerate() {
                            if i > 0 {
                                let f = format!("v{}", fills.len());
                                s.push_str(&f);
                                fills.push(f);
                            }
                            s.push_str(part);
                        }
                        s
                    })
                    .collect();
                let line = concrete.join(" ");
                let caps = re.captures(&line).unwrap_or_else(|| panic!("{} does not match {line:?}", t.text()));
                let got: Vec<&str> = caps.iter().skip(1).map(|m| m.unwrap().as_str()).collect();
                assert_eq!(got, fills, "{}", t.text());
            }
        }
    }
}

#[test]
fn linux_values_extracted_before_mutation() {
    let spec = linux_spec();
    let corpus = linux_corpus();
    for miner in miners() {
        let p = TemplateParser::fit(&corpus, &spec, &miner).unwrap();
        let labels = p.extract(corpus.lines()).labels;
        assert_eq!(labels, corpus.labels(), "{}", miner.name());
    }
}
