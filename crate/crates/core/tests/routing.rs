mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use systolic::interconnect::{route, route_butterfly_k, verify_assignment, InterconnectConfig, RoutingProblem};

#[test]
fn router_agrees_with_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [4, 8] {
        for k in [1, 2] {
            let cfg = InterconnectConfig::butterfly(n, k);
            for _ in 0..2_000 {
                let p = common::random_problem(&mut rng, n);
                let got = route_butterfly_k(&cfg, &p).unwrap();
                assert_eq!(got.feasible, common::butterfly_feasible(n, k, &p), "n={n} k={k} {p:?}");
                if got.feasible {
                    assert!(verify_assignment(&cfg, &p, &got.planes));
                }
            }
        }
    }
}

#[test]
fn shared_first_stage_link_blocks_one_plane() {
    // Both paths set bit 1 first and land on row 2 after stage 0.
    let p = RoutingProblem::unicasts(&[(0, 2), (2, 3)]);
    assert!(!common::butterfly_feasible(4, 1, &p));
    assert!(!route(&InterconnectConfig::butterfly(4, 1), &p).unwrap().feasible);
    assert!(common::butterfly_feasible(4, 2, &p));
    assert!(route(&InterconnectConfig::butterfly(4, 2), &p).unwrap().feasible);
}

#[test]
fn nonblocking_topologies_route_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cfg in [InterconnectConfig::crossbar(8), InterconnectConfig::benes_copy(8)] {
        for _ in 0..200 {
            let p = common::random_problem(&mut rng, 8);
            assert!(route(&cfg, &p).unwrap().feasible);
        }
    }
}
