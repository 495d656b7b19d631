use proptest::prelude::*;

use mvpln_core::em::Responsibilities;
use mvpln_core::init::{init_params, initialize, kmeans_init, random_init, wcss, InitMethod, InitSpec};
use mvpln_core::seed::rng_from_seed;
use mvpln_core::simgen::{generate, preset};
use mvpln_core::tensor_io::{CountTensor, LibrarySizes};

fn counts(n: usize, rp: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(prop_oneof![Just(0u64), 0u64..20, 0u64..100_000], n * rp)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kmeans_follows_unit_reordering(
        (n, data) in (6usize..40).prop_flat_map(|n| (Just(n), counts(n, 4))),
        g in 1usize..4,
        seed in any::<u64>(),
        shift in 0usize..40,
    ) {
        let tensor = CountTensor::from_counts(2, 2, data).unwrap();
        let spec = InitSpec { method: InitMethod::Kmeans, runs: 2, seed };
        let labels = kmeans_init(&tensor, g, &spec).unwrap();
        let mut order: Vec<usize> = (0..n).rev().collect();
        order.rotate_left(shift % n);
        let shuffled = tensor.permute_units(&order).unwrap();
        let labels2 = kmeans_init(&shuffled, g, &spec).unwrap();
        for (k, &j) in order.iter().enumerate() {
            prop_assert_eq!(labels2[k], labels[j]);
        }
        prop_assert!(labels.iter().all(|&l| l < g));
    }

    #[test]
    fn initial_means_are_finite(
        (n, data) in (2usize..30).prop_flat_map(|n| (Just(n), counts(n, 6))),
        seed in any::<u64>(),
    ) {
        let tensor = CountTensor::from_counts(2, 3, data).unwrap();
        let g = if n >= 4 { 2 } else { 1 };
        let z = random_init(n, g, &mut rng_from_seed(seed)).unwrap();
        if z.column_sums().iter().all(|&w| w >= 1.0) {
            for params in init_params(&tensor, &z).unwrap() {
                prop_assert!(params.mean.iter().all(|v| v.is_finite()));
                prop_assert!(params.mean.iter().all(|&v| v >= 0.5f64.ln()));
            }
        }
        let hard = Responsibilities::from_labels(&vec![0; n], 1).unwrap();
        prop_assert!(init_params(&tensor, &hard).unwrap()[0].mean.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn random_rows_lie_on_the_simplex(n in 1usize..50, g in 1usize..6, seed in any::<u64>()) {
        let z = random_init(n, g, &mut rng_from_seed(seed)).unwrap();
        for row in z.rows() {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn kmeans_separates_simulated_clusters() {
    let spec = preset("sim3").unwrap().with_n(200).with_seed(8);
    let (tensor, truth) = generate(&spec).unwrap();
    let init = InitSpec::default();
    let labels = kmeans_init(&tensor, 2, &init).unwrap();
    let score = mvpln_core::selection::ari(&labels, &truth).unwrap();
    assert!(score > 0.9, "ari {score}");
    assert!(wcss(&tensor, &labels, 2) <= wcss(&tensor, &truth, 2) + 1e-9);
}

#[test]
fn random_init_keeps_the_best_candidate() {
    let spec = preset("sim3").unwrap().with_n(100).with_seed(9);
    let (tensor, _) = generate(&spec).unwrap();
    let s = LibrarySizes::unit(6);
    let one = InitSpec {
        method: InitMethod::Random,
        runs: 1,
        seed: 4,
    };
    let many = InitSpec {
        method: InitMethod::Random,
        runs: 5,
        seed: 4,
    };
    let z1 = initialize(&tensor, &s, 2, &one).unwrap();
    let z5 = initialize(&tensor, &s, 2, &many).unwrap();
    let scores = mvpln_core::init::candidate_logliks(&tensor, &s, &[z1, z5]);
    assert!(scores[1] >= scores[0]);
}
