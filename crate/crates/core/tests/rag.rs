use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempres_core::data::QaPair;
use tempres_core::rag::chunk::chunk_documents;
use tempres_core::rag::client::{GoldEchoClient, HashingEmbedder};
use tempres_core::rag::qa::TableResolver;
use tempres_core::rag::{
    build_prompt, chunk_document, run_qa, ChunkId, PromptFields, PromptVariant, QaRunConfig, Retrieval, VectorIndex,
};
use tempres_core::Embedding;

proptest! {
    #[test]
    fn chunks_reassemble_the_document(
        text in "[a-zé ,.\n]{0,400}",
        max in 1usize..60,
        overlap_frac in 0.0f64..1.0,
    ) {
        let overlap = ((max as f64) * overlap_frac) as usize % max;
        let chunks = chunk_document("d", &text, max, overlap).unwrap();
        let mut rebuilt = String::new();
        for (i, c) in chunks.iter().enumerate() {
            let skip = if i == 0 { 0 } else { overlap };
            rebuilt.extend(c.text.chars().skip(skip));
            prop_assert!(c.text.chars().count() <= max);
            prop_assert_eq!(c.id.index, i);
        }
        prop_assert_eq!(rebuilt, text);
    }

    #[test]
    fn prompts_are_injective(
        a in ("[a-z?]{1,12}", "[A-Za-z ]{1,8}", "[A-Z_]{1,8}"),
        b in ("[a-z?]{1,12}", "[A-Za-z ]{1,8}", "[A-Z_]{1,8}"),
    ) {
        prop_assume!(a != b);
        fn fields(t: &(String, String, String)) -> PromptFields<'_> {
            PromptFields {
                question: &t.0,
                mention: Some(&t.1),
                entity: Some(&t.2),
                context: Some("ctx"),
            }
        }
        for v in PromptVariant::ALL {
            let pa = build_prompt(v, &fields(&a)).unwrap();
            let pb = build_prompt(v, &fields(&b)).unwrap();
            prop_assert_eq!(&pa, &build_prompt(v, &fields(&a)).unwrap());
            let used_differs = a.0 != b.0
                || (matches!(v, PromptVariant::LlmEr | PromptVariant::RalmEr | PromptVariant::RalmCot) && a.1 != b.1)
                || (v.uses_resolution() && a.2 != b.2);
            prop_assert_eq!(pa != pb, used_differs, "{} {:?} {:?}", v, a, b);
        }
    }
}

#[test]
fn default_stride_ranges() {
    let text = "x".repeat(3000);
    let ranges: Vec<(usize, usize)> = chunk_document("d", &text, 1500, 10)
        .unwrap()
        .iter()
        .map(|c| (c.start, c.end))
        .collect();
    assert_eq!(ranges, [(0, 1500), (1490, 2990), (2980, 3000)]);
}

fn brute_force(entries: &[(ChunkId, Embedding)], q: &Embedding, k: usize) -> Vec<(ChunkId, f64)> {
    let mut all: Vec<(ChunkId, f64)> = entries.iter().map(|(id, v)| (id.clone(), q.dot(v).unwrap())).collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[test]
fn retrieval_matches_a_full_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let dim = rng.random_range(1..=16);
        let n = rng.random_range(1..=200);
        let coarse = rng.random_bool(0.3);
        let draw = |rng: &mut ChaCha8Rng| {
            let v = (0..dim)
                .map(|_| {
                    if coarse {
                        f64::from(rng.random_range(-2..=2))
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            Embedding::new(v).unwrap()
        };
        let entries: Vec<(ChunkId, Embedding)> = (0..n)
            .map(|i| {
                let id = ChunkId {
                    doc_id: format!("doc{}", i % 7),
                    index: i,
                };
                (id, draw(&mut rng))
            })
            .collect();
        let index = VectorIndex::build(entries.clone()).unwrap();
        for _ in 0..5 {
            let q = draw(&mut rng);
            let k = rng.random_range(1..=n + 3);
            assert_eq!(index.retrieve(&q, k).unwrap(), brute_force(&entries, &q, k));
        }
        if !coarse && dim > 1 {
            let unit: Vec<(ChunkId, Embedding)> = entries.iter().map(|(id, v)| (id.clone(), v.normalized())).collect();
            let (planted_id, planted) = &unit[rng.random_range(0..n)];
            let hits = VectorIndex::build(unit.clone()).unwrap().retrieve(planted, 1).unwrap();
            assert_eq!(&hits[0].0, planted_id);
        }
    }
}

fn qa_fixture() -> (Vec<(String, String)>, Vec<QaPair>) {
    let docs = vec![
        (
            "d1".to_string(),
            "Lionel Messi was born in Rosario, Argentina. He plays for Inter Miami.".to_string(),
        ),
        (
            "d2".to_string(),
            "Manchester United play at Old Trafford. Fans call them the Red Devils.".to_string(),
        ),
        (
            "d3".to_string(),
            "The tower was completed in 1889 for the world fair in Paris.".to_string(),
        ),
    ];
    let pair = |id: &str, q: &str, m: &str, e: &str, a: &str, doc: &str| QaPair {
        qa_id: id.into(),
        question: q.into(),
        mention: m.into(),
        gold_entity: e.into(),
        answer: a.into(),
        segment: "0506".into(),
        evidence_doc: Some(doc.into()),
    };
    let pairs = vec![
        pair(
            "q1",
            "Where was La Pulga born?",
            "La Pulga",
            "Lionel_Messi",
            "Rosario, Argentina.",
            "d1",
        ),
        pair(
            "q2",
            "Where do the Red Devils play?",
            "the Red Devils",
            "Manchester_United_F.C.",
            "Old Trafford.",
            "d2",
        ),
        pair(
            "q3",
            "When was the iron lady finished?",
            "the iron lady",
            "Eiffel_Tower",
            "In 1889.",
            "d3",
        ),
        pair(
            "q4",
            "Where does La Pulga play?",
            "La Pulga",
            "Lionel_Messi",
            "Inter Miami.",
            "d9",
        ),
    ];
    (docs, pairs)
}

#[test]
fn gold_echo_scores_perfectly_for_every_variant() {
    let (docs, pairs) = qa_fixture();
    let chunks = chunk_documents(docs.iter().map(|(a, b)| (a.as_str(), b.as_str())), 40, 10).unwrap();
    let embedder = HashingEmbedder::new(256).unwrap();
    let retrieval = Retrieval::build(chunks, &embedder).unwrap();
    let resolver = TableResolver(pairs.iter().map(|p| (p.qa_id.clone(), p.gold_entity.clone())).collect());
    let client = GoldEchoClient::new(&pairs);
    for v in PromptVariant::ALL {
        let out = run_qa(
            &pairs,
            v,
            &client,
            Some(&retrieval),
            Some(&resolver),
            &QaRunConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), pairs.len());
        let mean = out.iter().map(|p| p.f1).sum::<f64>() / out.len() as f64;
        assert_eq!(mean, 1.0, "{v}");
        assert!(out.iter().all(|p| p.error.is_none()));
        if v.uses_context() {
            assert_eq!(out[3].hit, Some(false));
        }
        if v.uses_resolution() {
            assert!(out.iter().all(|p| p.resolution_ok == Some(true)));
        }
        let ids: BTreeSet<&str> = out.iter().map(|p| p.qa_id.as_str()).collect();
        assert_eq!(ids.len(), pairs.len());
    }
}

#[test]
fn qa_runs_are_reproducible_across_parallelism() {
    let (docs, pairs) = qa_fixture();
    let chunks = chunk_documents(docs.iter().map(|(a, b)| (a.as_str(), b.as_str())), 30, 5).unwrap();
    let embedder = HashingEmbedder::new(128).unwrap();
    let retrieval = Retrieval::build(chunks, &embedder).unwrap();
    let client = GoldEchoClient::new(&pairs);
    let run = |parallelism| {
        let config = QaRunConfig {
            parallelism,
            ..Default::default()
        };
        run_qa(&pairs, PromptVariant::Ralm, &client, Some(&retrieval), None, &config).unwrap()
    };
    assert_eq!(run(1), run(8));
}
