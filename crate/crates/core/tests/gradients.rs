mod support;

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::gradient::{max_relative_error, random_case, MAX_REL_ERR};
use tempres_core::train::{loss_and_gradient, LossReading};

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..40 {
        let case = random_case(&mut rng);
        let reading = if i % 4 == 3 {
            LossReading::Weight
        } else {
            LossReading::Affinity
        };
        let err = max_relative_error(&case, reading);
        assert!(err < MAX_REL_ERR, "batch {i}: relative error {err:e}");
    }
}

#[test]
fn gradient_flows_into_sampled_members_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let case = random_case(&mut rng);
        let (_, grad) = loss_and_gradient(&case.edges, &case.params, &case.state, LossReading::Affinity).unwrap();
        let mut touched: BTreeSet<&str> = case.edges.iter().map(|e| e.target.as_str()).collect();
        for e in &case.edges {
            if e.source.is_entity() {
                if case.state.alpha() < 1.0 {
                    touched.extend(
                        case.state
                            .get(&e.source.ref_id)
                            .unwrap()
                            .sampled
                            .iter()
                            .map(String::as_str),
                    );
                }
            } else {
                touched.insert(e.source.ref_id.as_str());
            }
        }
        for id in grad.mentions.keys() {
            assert!(touched.contains(id.as_str()), "unexpected gradient for {id}");
        }
    }
}
