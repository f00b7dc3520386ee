mod common;

use std::collections::{BTreeMap, BTreeSet};

use pkg_core::builder::{cooc_statistics, glean, reconstruct, segment, CoocUnit, EntityKey};
use pkg_core::llm::{LlmMode, MockRule};
use pkg_core::metapath::MetaPathConfig;
use pkg_core::prompts::PromptConfig;
use pkg_core::{build, BuilderConfig, HashEmbedder, MockLlm};
use proptest::prelude::*;
use rand::Rng;

fn build_rules(corpus: &pkg_core::Corpus, config: &BuilderConfig) -> (pkg_core::Pkg, pkg_core::BuildReport) {
    build(corpus, config, &HashEmbedder::new(64), &MetaPathConfig::default(), None).unwrap()
}

#[test]
fn random_corpora_are_fully_grounded() {
    for seed in 0..12u64 {
        let corpus = common::random_corpus(seed);
        let (g, report) = build_rules(&corpus, &BuilderConfig { chunk_target_chars: 200, chunk_overlap_chars: 40, ..BuilderConfig::default() });
        assert!(g.validate().is_empty(), "seed {seed}");
        assert_eq!(report.entities, g.entities().len());
        for e in g.entities().values() {
            assert!(!e.source_chunk_ids.is_empty());
            for c in &e.source_chunk_ids {
                assert!(g.chunk(c.as_str()).is_some());
                assert!(g.chunk_entities(c.as_str()).any(|id| id == &e.id));
            }
        }
        for e in g.edges().values() {
            assert!(e.provenance_chunk_ids.iter().all(|c| g.chunk(c.as_str()).is_some()));
        }
    }
}

#[test]
fn chunks_reconstruct_every_document() {
    for seed in 20..30u64 {
        let corpus = common::random_corpus(seed);
        for doc in &corpus.documents {
            if doc.text.trim().is_empty() {
                continue;
            }
            for (target, overlap) in [(60, 0), (120, 30), (400, 100)] {
                let segments = segment(&doc.text, target, overlap);
                assert_eq!(reconstruct(&segments), doc.text, "seed {seed} target {target}");
                assert!(segments.windows(2).all(|w| w[0].span.start < w[1].span.start));
            }
        }
    }
}

fn key(i: usize) -> EntityKey {
    EntityKey::new(&format!("e{i}"), "thing")
}

proptest! {
    #[test]
    fn cooc_statistics_match_counting(units in prop::collection::vec(prop::collection::btree_set(0usize..6, 0..5), 1..30)) {
        let cooc: Vec<CoocUnit> = units
            .iter()
            .map(|u| CoocUnit { entities: u.iter().map(|&i| key(i)).collect(), chunk_ids: BTreeSet::new() })
            .collect();
        let stats = cooc_statistics(&cooc);
        let n = units.len() as f64;
        let single = |i: usize| units.iter().filter(|u| u.contains(&i)).count();
        let mut expected = BTreeMap::new();
        for a in 0..6 {
            for b in a + 1..6 {
                let both = units.iter().filter(|u| u.contains(&a) && u.contains(&b)).count();
                if both > 0 {
                    expected.insert((a, b), (both, (both as f64 * n / (single(a) * single(b)) as f64).ln()));
                }
            }
        }
        prop_assert_eq!(stats.len(), expected.len());
        for ((a, b), (count, pmi)) in expected {
            let s = &stats[&(key(a), key(b))];
            prop_assert_eq!(s.count, count);
            prop_assert!((s.pmi - pmi).abs() < 1e-12);
        }
    }
}

#[test]
fn gleaning_issues_one_call_per_round_plus_one() {
    let text = "Ada Quill works at Nimbus Labs.";
    let mut rng = common::rng(3);
    for _ in 0..20 {
        let rounds = rng.gen_range(0..6);
        let llm = MockLlm::with_rules(vec![MockRule::new("yes or no", "yes")], "");
        let out = glean(text, &llm, &PromptConfig::default(), rounds, true).unwrap();
        assert_eq!(out.extraction_calls, 1 + rounds);
        assert_eq!(llm.call_count(LlmMode::Complete), 1 + rounds);
    }
}

#[test]
fn builds_with_a_scripted_model_are_deterministic() {
    let corpus = common::random_corpus(42);
    let config = BuilderConfig {
        llm_enabled: true,
        chunk_target_chars: 300,
        chunk_overlap_chars: 50,
        ..BuilderConfig::default()
    };
    let run = || {
        let llm = MockLlm::with_rules(vec![MockRule::new("yes or no", "no")], "");
        let (g, report) = build(&corpus, &config, &HashEmbedder::new(64), &MetaPathConfig::default(), Some(&llm)).unwrap();
        assert_eq!(report.llm_extraction_calls, g.chunks().len());
        g.to_jsonl()
    };
    assert_eq!(run(), run());
}
