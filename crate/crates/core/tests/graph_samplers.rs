mod support;

use portsel::dataset::ScenarioKey;
use portsel::metarep::{MetaRep, RepKind};
use portsel::simgraph::{build_graph, ds_sample, mis_sample, DEFAULT_THRESHOLDS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{is_dominating, is_maximal_independent, random_graph};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn samplers_meet_their_definitions(seed in any::<u64>(), n in 1usize..=40, density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, density);
        let mis = mis_sample(&g, seed);
        prop_assert!(is_maximal_independent(&g, &mis));
        let ds = ds_sample(&g, seed);
        prop_assert!(is_dominating(&g, &ds));
        // a maximal independent set is itself dominating
        prop_assert!(is_dominating(&g, &mis));
    }
}

#[test]
fn edges_shrink_along_threshold_ladder() {
    let s = ScenarioKey::new(5, 500).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let n = rng.random_range(2..30);
        let dim = rng.random_range(1..8);
        let reps: Vec<MetaRep> = (0..n)
            .map(|a| MetaRep {
                algorithm: format!("a{a:02}"),
                kind: RepKind::P2v,
                problem: None,
                scenario: s,
                vector: (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
            })
            .collect();
        let mut previous: Option<Vec<(usize, usize)>> = None;
        for thr in DEFAULT_THRESHOLDS {
            let edges = build_graph(&reps, thr).unwrap().graph().edges();
            if let Some(prev) = &previous {
                assert!(edges.iter().all(|e| prev.contains(e)));
            }
            previous = Some(edges);
        }
    }
}
