use pixmatch::oracle::{oracle_equalized_affinity, oracle_match};
use pixmatch::scene::{make_distractor_scene, make_random_scene, RandomScene};
use pixmatch::{
    affinity_equalized, affinity_surjective, match_frames, match_with_references, FeatureMap,
    MatchConfig, Mechanism, ProbMask, Reference, ScoreMap,
};
use proptest::prelude::*;

fn configs() -> Vec<MatchConfig> {
    vec![
        MatchConfig::surjective(),
        MatchConfig::kernel(32.0),
        MatchConfig::kernel(1.5),
        MatchConfig::topk(128),
        MatchConfig::topk(16),
        MatchConfig::topk(3),
        MatchConfig::equalized(),
    ]
}

fn scene(gr: usize, gq: usize, c: usize, seed: u64) -> RandomScene {
    make_random_scene(gr, gq, c, seed).unwrap()
}

fn run(s: &RandomScene, cfg: &MatchConfig) -> ScoreMap {
    match_frames(&s.reference, &s.ref_mask, &s.query, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fast_path_matches_oracle(gr in 1usize..=12, gq in 1usize..=12, c in prop::sample::select(vec![1usize, 4, 16]), seed in any::<u64>()) {
        let s = scene(gr, gq, c, seed);
        for cfg in configs() {
            let fast = run(&s, &cfg);
            let slow = oracle_match(&s.reference, &s.ref_mask, &s.query, &cfg).unwrap();
            let diff = fast.max_abs_diff(&slow).unwrap();
            prop_assert!(diff <= 1e-6, "{:?}: diff {}", cfg.mechanism, diff);
        }
    }

    #[test]
    fn equalized_rows_are_stochastic(gr in 1usize..=10, gq in 1usize..=10, c in 1usize..=16, scale in 0.01f32..20.0, seed in any::<u64>()) {
        let s = scene(gr, gq, c, seed);
        let q = FeatureMap::new(c, gq, gq, s.query.data().iter().map(|v| v * scale).collect()).unwrap();
        let a = affinity_equalized(&s.reference, &q).unwrap();
        for row in a.rows() {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-5);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn surjective_and_bijective_stay_in_unit_range(gr in 1usize..=8, gq in 1usize..=8, c in 1usize..=8, seed in any::<u64>()) {
        let s = scene(gr, gq, c, seed);
        let a = affinity_surjective(&s.reference, &s.query).unwrap();
        prop_assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let sur = run(&s, &MatchConfig::surjective());
        for cfg in [MatchConfig::kernel(2.0), MatchConfig::topk(2)] {
            let bij = run(&s, &cfg);
            for (b, u) in bij.data().iter().zip(sur.data()) {
                prop_assert!((0.0..=1.0).contains(b));
                prop_assert!(b <= u);
            }
        }
    }

    #[test]
    fn reference_permutation_leaves_scores_unchanged(g in 2usize..=6, c in 1usize..=6, seed in any::<u64>()) {
        let s = scene(g, g, c, seed);
        let n = g * g;
        let perm = pixmatch::rng::SplitMix64::new(seed ^ 0x5555).permutation(n);
        let pixels: Vec<Vec<f32>> = perm.iter().map(|&p| s.reference.pixel_vector(p)).collect();
        let fg: Vec<f32> = perm.iter().map(|&p| s.ref_mask.foreground()[p]).collect();
        let reference = FeatureMap::from_pixels(c, g, g, &pixels).unwrap();
        let mask = ProbMask::from_foreground(g, g, &fg).unwrap();
        // Top-K and kernel are per-row filters, so they are equivariant too.
        for cfg in configs() {
            let a = run(&s, &cfg);
            let b = match_frames(&reference, &mask, &s.query, &cfg).unwrap();
            prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
        }
    }
}

#[test]
fn softmax_is_shift_invariant_per_row() {
    // Adding a constant to every raw score of the single reference row.
    // With reference (1, t) and query pixels (x_q, 1), raw = x_q + t.
    let q = FeatureMap::new(2, 1, 4, vec![0.3, -1.2, 2.0, 0.7, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let base = affinity_equalized(&FeatureMap::new(2, 1, 1, vec![1.0, 0.0]).unwrap(), &q).unwrap();
    for t in [-30.0f32, -1.0, 5.0, 40.0] {
        let shifted =
            affinity_equalized(&FeatureMap::new(2, 1, 1, vec![1.0, t]).unwrap(), &q).unwrap();
        for (a, b) in base.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn oracle_satisfies_the_same_invariants() {
    for seed in 0..20 {
        let s = scene(5, 6, 4, seed);
        for row in oracle_equalized_affinity(&s.reference, &s.query).unwrap() {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-5);
        }
        let sur = oracle_match(
            &s.reference,
            &s.ref_mask,
            &s.query,
            &MatchConfig::surjective(),
        )
        .unwrap();
        assert!(sur.data().iter().all(|v| (0.0..=1.0).contains(v)));
        for cfg in [MatchConfig::kernel(1.0), MatchConfig::topk(4)] {
            let bij = oracle_match(&s.reference, &s.ref_mask, &s.query, &cfg).unwrap();
            assert!(bij.data().iter().zip(sur.data()).all(|(b, u)| b <= u));
        }
    }
}

#[test]
fn single_query_pixel_collapses_non_equalized_mechanisms() {
    for seed in 0..20 {
        let s = scene(6, 1, 8, seed);
        let sur = run(&s, &MatchConfig::surjective());
        for cfg in [
            MatchConfig::kernel(0.1),
            MatchConfig::kernel(64.0),
            MatchConfig::topk(1),
            MatchConfig::topk(500),
        ] {
            assert_eq!(run(&s, &cfg), sur);
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = scene(20, 20, 16, 3);
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    for cfg in configs() {
        let one = pool(1).install(|| run(&s, &cfg));
        let three = pool(3).install(|| run(&s, &cfg));
        assert_eq!(one.data(), three.data(), "{:?}", cfg.mechanism);
    }
    let a1 = pool(1).install(|| affinity_equalized(&s.reference, &s.query).unwrap());
    let a3 = pool(3).install(|| affinity_equalized(&s.reference, &s.query).unwrap());
    assert_eq!(a1, a3);
}

#[test]
fn distractor_scene_orderings() {
    let eq_cfg = MatchConfig::equalized();
    let sur_cfg = MatchConfig::surjective();
    for seed in 0..10 {
        let mut last = f32::INFINITY;
        for n in [1, 2, 4, 8] {
            let s = make_distractor_scene(8, 16, n, seed).unwrap();
            let eq = match_frames(&s.reference, &s.ref_mask, &s.query, &eq_cfg).unwrap();
            let sur = match_frames(&s.reference, &s.ref_mask, &s.query, &sur_cfg).unwrap();
            let d = s.distractor_pixels[0];
            assert!(eq.foreground()[d] < sur.foreground()[d]);
            assert_eq!(sur.foreground()[d], 1.0);
            // Strictly decreasing: every extra copy replaces a smaller raw score.
            assert!(eq.foreground()[d] < last);
            last = eq.foreground()[d];
        }
    }
}

#[test]
fn surjective_copy_score_is_constant_in_copies() {
    let scores: Vec<f32> = [1, 3, 6]
        .into_iter()
        .map(|n| {
            let s = make_distractor_scene(6, 12, n, 1).unwrap();
            let m = match_frames(
                &s.reference,
                &s.ref_mask,
                &s.query,
                &MatchConfig::surjective(),
            )
            .unwrap();
            m.foreground()[s.distractor_pixels[0]]
        })
        .collect();
    assert!(scores.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn two_reference_stack_uses_role_defaults() {
    let a = scene(4, 12, 4, 1);
    let b = scene(4, 12, 4, 2);
    let stack = match_with_references(
        Reference {
            features: &a.reference,
            mask: &a.ref_mask,
        },
        Reference {
            features: &b.reference,
            mask: &b.ref_mask,
        },
        &a.query,
        Mechanism::BijectiveTopK,
    )
    .unwrap();
    assert_eq!(stack.dims, vec![4, 12, 12]);
    let first = match_frames(&a.reference, &a.ref_mask, &a.query, &MatchConfig::topk(128)).unwrap();
    let second = match_frames(&b.reference, &b.ref_mask, &a.query, &MatchConfig::topk(16)).unwrap();
    assert_eq!(&stack.data[..288], first.data());
    assert_eq!(&stack.data[288..], second.data());
}
