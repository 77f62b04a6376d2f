//! Random loss batches and a central-difference check of the analytic
//! gradient.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tempres_core::graph::AffinityNode;
use tempres_core::train::{batch_loss, loss_and_gradient, EdgeLabel, LossReading};
use tempres_core::{ClusterState, Embedding, EmbeddingKind, ParameterSet};

pub const H: f64 = 1e-6;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Coordinates whose gradient magnitudes are both below this are compared
/// absolutely against it.
pub const FLOOR: f64 = 1e-6;

pub struct Case {
    pub params: ParameterSet,
    pub state: ClusterState,
    pub edges: Vec<EdgeLabel>,
}

pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let dim = rng.random_range(2..=8);
    let n_ent = rng.random_range(1..=4);
    let n_men = rng.random_range(3..=10);
    let mut params = ParameterSet::new(dim);
    let draw = |rng: &mut ChaCha8Rng| Embedding::new((0..dim).map(|_| rng.random_range(-0.8..0.8)).collect()).unwrap();
    let entities: Vec<String> = (0..n_ent).map(|i| format!("E{i}")).collect();
    let mentions: Vec<String> = (0..n_men).map(|i| format!("m{i}")).collect();
    for e in &entities {
        params.insert(EmbeddingKind::Entity, e.clone(), draw(rng)).unwrap();
    }
    for m in &mentions {
        params.insert(EmbeddingKind::Mention, m.clone(), draw(rng)).unwrap();
    }
    let mut memberships: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for m in &mentions {
        if rng.random_bool(0.6) {
            let e = &entities[rng.random_range(0..n_ent)];
            memberships.entry(e.clone()).or_default().insert(m.clone());
        }
    }
    let alpha = match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.random_range(0.0..1.0),
    };
    let cap = rng.random_range(1..=4);
    let state = ClusterState::from_memberships(
        &params,
        entities.iter().map(String::as_str),
        &memberships,
        alpha,
        cap,
        rng.random(),
    )
    .unwrap();

    let mut edges = Vec::new();
    let targets = rng.random_range(1..=n_men);
    for t in mentions.iter().take(targets) {
        for e in &entities {
            if rng.random_bool(0.7) {
                edges.push(EdgeLabel {
                    source: AffinityNode::entity(e.clone()),
                    target: t.clone(),
                    positive: rng.random_bool(0.5),
                });
            }
        }
        for s in &mentions {
            if s != t && rng.random_bool(0.4) {
                edges.push(EdgeLabel {
                    source: AffinityNode::mention(s.clone()),
                    target: t.clone(),
                    positive: rng.random_bool(0.5),
                });
            }
        }
    }
    Case { params, state, edges }
}

pub fn max_relative_error(case: &Case, reading: LossReading) -> f64 {
    let (_, grad) = loss_and_gradient(&case.edges, &case.params, &case.state, reading).unwrap();
    let mut worst: f64 = 0.0;
    let keys: Vec<(EmbeddingKind, String)> = case
        .params
        .entities()
        .map(|(id, _)| (EmbeddingKind::Entity, id.to_string()))
        .chain(
            case.params
                .mentions()
                .map(|(id, _)| (EmbeddingKind::Mention, id.to_string())),
        )
        .collect();
    for (kind, id) in keys {
        let analytic = grad
            .get(kind, &id)
            .map(<[f64]>::to_vec)
            .unwrap_or(vec![0.0; case.params.dim()]);
        for (d, a) in analytic.iter().enumerate() {
            let mut p = case.params.clone();
            p.get_mut(kind, &id).unwrap().as_mut_slice()[d] += H;
            let up = batch_loss(&case.edges, &p, &case.state, reading).unwrap();
            p.get_mut(kind, &id).unwrap().as_mut_slice()[d] -= 2.0 * H;
            let down = batch_loss(&case.edges, &p, &case.state, reading).unwrap();
            let numeric = (up - down) / (2.0 * H);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}
