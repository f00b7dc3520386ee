mod common;

use common::{compare_with_oracle, oracle_postings, random_typed_graph, GraphSpec};
use pkg_core::metapath::{enumerate_metapaths, MetaPathConfig};
use rand::Rng;

fn spec(nodes: usize, edges: usize) -> GraphSpec {
    GraphSpec {
        nodes,
        edges,
        types: 4,
        relation_types: 3,
        dim: 16,
        embed: false,
    }
}

fn config(max_len: usize, cap: usize) -> MetaPathConfig {
    MetaPathConfig {
        max_len,
        per_node_template_cap: cap,
        ..MetaPathConfig::default()
    }
}

#[test]
fn index_matches_brute_force_paths() {
    for seed in 0..40u64 {
        let mut rng = common::rng(seed);
        let nodes = rng.gen_range(2..60);
        let g = random_typed_graph(seed, &spec(nodes, rng.gen_range(0..nodes * 3)));
        for max_len in 1..=4 {
            let index = enumerate_metapaths(&g, &config(max_len, 64));
            if let Err(e) = compare_with_oracle(&index, &oracle_postings(&g, max_len), 64) {
                panic!("seed {seed}, max_len {max_len}: {e}");
            }
        }
    }
}

#[test]
fn small_caps_keep_sorted_prefixes() {
    for seed in 100..120u64 {
        let g = random_typed_graph(seed, &spec(40, 160));
        let index = enumerate_metapaths(&g, &config(4, 3));
        assert!(index.postings().values().flat_map(|m| m.values()).any(|p| p.truncated));
        compare_with_oracle(&index, &oracle_postings(&g, 4), 3).unwrap();
    }
}

#[test]
fn exhausted_budget_flags_truncation() {
    let g = random_typed_graph(7, &spec(30, 200));
    let index = enumerate_metapaths(
        &g,
        &MetaPathConfig {
            expansion_budget: 10,
            ..config(4, 64)
        },
    );
    compare_with_oracle(&index, &oracle_postings(&g, 4), 64).unwrap();
    assert!(index.postings().values().all(|m| m.values().all(|p| p.truncated)));
}

#[test]
fn complete_postings_are_reverse_symmetric() {
    for seed in 200..210u64 {
        let g = random_typed_graph(seed, &spec(30, 60));
        let index = enumerate_metapaths(&g, &config(4, 10_000));
        for (start, postings) in index.postings() {
            for (label, posting) in postings {
                let reversed_label = label.split('-').rev().collect::<Vec<_>>().join("-");
                for path in &posting.instances {
                    let mut rev = path.clone();
                    rev.reverse();
                    let back = index.posting(rev[0].as_str(), &reversed_label).unwrap();
                    assert!(back.instances.contains(&rev), "{start} {label}");
                }
            }
        }
    }
}

#[test]
fn relation_types_do_not_change_the_index() {
    for seed in 300..320u64 {
        let mut g = random_typed_graph(seed, &spec(40, 100));
        let before = enumerate_metapaths(&g, &config(4, 16));
        let mut rng = common::rng(seed ^ 0xabcd);
        let ids: Vec<_> = g.edges().keys().cloned().collect();
        for id in ids {
            g.relabel_edge(&id, &format!("shuffled_{}", rng.gen_range(0..9))).unwrap();
        }
        assert_eq!(enumerate_metapaths(&g, &config(4, 16)), before, "seed {seed}");
    }
}

#[cfg(feature = "parallel")]
#[test]
fn one_thread_and_many_threads_agree() {
    let g = random_typed_graph(5, &spec(80, 240));
    let parallel = enumerate_metapaths(&g, &config(4, 64));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let sequential = pool.install(|| enumerate_metapaths(&g, &config(4, 64)));
    assert_eq!(parallel, sequential);
}
