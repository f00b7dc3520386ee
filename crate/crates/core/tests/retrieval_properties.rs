mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use pkg_core::metapath::MetaPathConfig;
use pkg_core::retriever::{fuse, ChannelHit, Support};
use pkg_core::{
    build, top_k, BuilderConfig, Channel, ChannelResult, ChunkId, FusionConfig, HashEmbedder, Retriever, RetrieverConfig,
    Vector,
};
use proptest::prelude::*;
use rand::Rng;

fn dot_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn top_k_matches_exhaustive_sort() {
    let mut rng = common::rng(17);
    let raw: Vec<Vec<f64>> = (0..500).map(|_| (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let candidates: Vec<(usize, Vector)> = raw.iter().cloned().map(Vector::new).enumerate().collect();
    for _ in 0..50 {
        let q: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut oracle: Vec<(usize, f64)> = raw.iter().enumerate().map(|(i, v)| (i, dot_cosine(&q, v))).collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for k in [1, 5, 20, 600] {
            let got = top_k(&Vector::new(q.clone()), &candidates, k);
            let expected = &oracle[..k.min(oracle.len())];
            assert_eq!(got.iter().map(|h| h.0).collect::<Vec<_>>(), expected.iter().map(|h| h.0).collect::<Vec<_>>());
            assert!(got.iter().zip(expected).all(|(g, e)| (g.1 - e.1).abs() < 1e-9));
        }
    }
}

fn channel_result(channel: Channel, hits: &[(u8, f64)]) -> ChannelResult {
    ChannelResult::new(
        channel,
        hits.iter().map(|(id, s)| ChannelHit {
            chunk_id: ChunkId::new(format!("c_{id:02}")),
            score: *s,
            support: Support::default(),
        }),
    )
}

fn hits_strategy() -> impl Strategy<Value = Vec<(u8, f64)>> {
    prop::collection::vec((0u8..30, -5.0f64..5.0), 0..20)
}

fn fused_scores(results: &[ChannelResult]) -> BTreeMap<ChunkId, f64> {
    fuse(results, &FusionConfig::default())
        .unwrap()
        .into_iter()
        .map(|h| (h.chunk_id, h.fused_score))
        .collect()
}

proptest! {
    #[test]
    fn adding_a_hit_never_lowers_that_chunk(
        a in hits_strategy(), b in hits_strategy(), extra in 0u8..30, score in -5.0f64..5.0, which in 0usize..2,
    ) {
        let base = [channel_result(Channel::Regex, &a), channel_result(Channel::Vector, &b)];
        let id = ChunkId::new(format!("c_{extra:02}"));
        let before = fused_scores(&base).get(&id).copied().unwrap_or(0.0);
        let mut grown = [a.clone(), b.clone()];
        grown[which].push((extra, score));
        let after_results = [channel_result(Channel::Regex, &grown[0]), channel_result(Channel::Vector, &grown[1])];
        let after = fused_scores(&after_results)[&id];
        prop_assert!(after >= before);
        let mut with_channel = base.to_vec();
        with_channel.push(channel_result(Channel::Metapath, &[(extra, score)]));
        let joined = fused_scores(&with_channel)[&id];
        prop_assert!(joined > before);
    }

    #[test]
    fn fusion_depends_only_on_ranks(a in hits_strategy(), b in hits_strategy(), scale in 0.01f64..100.0, shift in -10.0f64..10.0) {
        let base = [channel_result(Channel::Vector, &a), channel_result(Channel::Metapath, &b)];
        let rescaled: Vec<(u8, f64)> = a.iter().map(|(id, s)| (*id, s * scale + shift)).collect();
        let changed = [channel_result(Channel::Vector, &rescaled), channel_result(Channel::Metapath, &b)];
        let order = |rs: &[ChannelResult]| {
            fuse(rs, &FusionConfig::default()).unwrap().into_iter().map(|h| (h.chunk_id, h.fused_score)).collect::<Vec<_>>()
        };
        prop_assert_eq!(order(&base), order(&changed));
    }
}

#[test]
fn retrieval_is_sorted_bounded_and_repeatable() {
    let corpus = common::random_corpus(5);
    let provider = Arc::new(HashEmbedder::new(128));
    let (g, _) = build(&corpus, &BuilderConfig { chunk_target_chars: 160, chunk_overlap_chars: 20, ..BuilderConfig::default() }, provider.as_ref(), &MetaPathConfig::default(), None).unwrap();
    let names: Vec<String> = g.entities().values().take(10).map(|e| e.name.clone()).collect();
    let retriever = Retriever::new(Arc::new(g), provider, RetrieverConfig::default()).unwrap();
    for name in names {
        let query = format!("What is known about {name}?");
        for k in [1, 3, 10] {
            let r = retriever.retrieve(&query, &Channel::ALL, k).unwrap();
            assert!(r.items.len() <= k);
            assert!(r.items.windows(2).all(|w| w[0].fused_score >= w[1].fused_score));
            assert_eq!(retriever.retrieve(&query, &Channel::ALL, k).unwrap(), r);
        }
    }
}
