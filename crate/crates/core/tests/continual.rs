use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempres_core::affinity::cluster_representation;
use tempres_core::graph::rank_candidates;
use tempres_core::synth::{generate, SynthConfig, SynthDataset};
use tempres_core::train::{run_continual, static_rankings, ContinualConfig, Prediction, TrainerConfig};
use tempres_core::{ClusterState, Embedding, EmbeddingKind, Phase};

fn small() -> SynthConfig {
    SynthConfig {
        entities: 6,
        mentions_per_segment: 24,
        ..Default::default()
    }
}

fn config(alpha: f64, seed: u64) -> ContinualConfig {
    ContinualConfig {
        trainer: TrainerConfig {
            alpha,
            seed,
            epochs: 2,
            learning_rate: 0.05,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn ids(d: &SynthDataset) -> Vec<String> {
    d.catalog.ids().map(str::to_string).collect()
}

fn run(d: &SynthDataset, c: &ContinualConfig) -> Vec<Prediction> {
    run_continual(&d.corpus, &ids(d), d.params.clone(), c)
        .unwrap()
        .predictions()
        .cloned()
        .collect()
}

#[test]
fn identical_seeds_identical_runs() {
    let d = generate(&small(), 4).unwrap();
    let a = run(&d, &config(0.8, 9));
    let b = run(&d, &config(0.8, 9));
    assert!(!a.is_empty());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn later_segments_do_not_change_earlier_predictions() {
    let mut d = generate(&small(), 6).unwrap();
    let first_test = d
        .corpus
        .segments
        .iter()
        .find(|s| s.phase == Phase::Test)
        .unwrap()
        .label
        .clone();
    let last = d.corpus.segments.last().unwrap().label.clone();
    assert_ne!(first_test, last);
    let before: Vec<Prediction> = run(&d, &config(0.8, 1))
        .into_iter()
        .filter(|p| p.segment == first_test)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let dim = d.params.dim();
    let late: Vec<String> = d.corpus.mentions_in(&last).map(|m| m.mention_id.clone()).collect();
    for m in late {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        *d.params.get_mut(EmbeddingKind::Mention, &m).unwrap() = Embedding::new(v).unwrap();
    }
    let after: Vec<Prediction> = run(&d, &config(0.8, 1))
        .into_iter()
        .filter(|p| p.segment == first_test)
        .collect();
    assert_eq!(before, after);
}

#[test]
fn alpha_one_ranks_like_static_entities() {
    let d = generate(&small(), 2).unwrap();
    let entity_ids = ids(&d);
    let out = run_continual(&d.corpus, &entity_ids, d.params.clone(), &config(1.0, 3)).unwrap();
    for seg in out.segments.iter().filter(|s| s.segment.phase == Phase::Test) {
        let mentions: Vec<String> = d
            .corpus
            .mentions_in(&seg.segment.label)
            .map(|m| m.mention_id.clone())
            .collect();
        let fixed = static_rankings(&out.params, &entity_ids, &mentions, entity_ids.len()).unwrap();
        for (m, want) in mentions.iter().zip(fixed) {
            let got: Vec<String> = rank_candidates(out.params.mention(m).unwrap(), &seg.state, entity_ids.len())
                .unwrap()
                .into_iter()
                .map(|(id, _)| id)
                .collect();
            assert_eq!(got, want);
        }
        for (id, c) in seg.state.iter() {
            assert_eq!(&c.rep, out.params.entity(id).unwrap());
        }
    }
}

#[test]
fn alpha_zero_is_the_member_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..200 {
        let dim = rng.random_range(1..=12);
        let n = rng.random_range(1..=40);
        let mut draw = || Embedding::new((0..dim).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let entity = draw();
        let members: Vec<Embedding> = (0..n).map(|_| draw()).collect();
        let refs: Vec<&Embedding> = members.iter().collect();
        let rep = cluster_representation(&entity, &refs, 0.0).unwrap();
        for d in 0..dim {
            let mean = members.iter().map(|m| m.as_slice()[d]).sum::<f64>() / n as f64;
            assert!((rep.as_slice()[d] - mean).abs() <= 1e-12);
        }
    }
}

#[test]
fn state_membership_is_capped_and_reproducible() {
    let d = generate(&small(), 8).unwrap();
    let entity_ids = ids(&d);
    let all: BTreeSet<String> = d.corpus.mentions.iter().map(|m| m.mention_id.clone()).collect();
    let memberships = BTreeMap::from([(entity_ids[0].clone(), all)]);
    let build = |seed| {
        ClusterState::from_memberships(
            &d.params,
            entity_ids.iter().map(String::as_str),
            &memberships,
            0.8,
            30,
            seed,
        )
        .unwrap()
    };
    let a = build(5);
    assert_eq!(a.get(&entity_ids[0]).unwrap().sampled.len(), 30);
    assert_eq!(a, build(5));
    assert_ne!(
        a.get(&entity_ids[0]).unwrap().sampled,
        build(6).get(&entity_ids[0]).unwrap().sampled
    );
}
