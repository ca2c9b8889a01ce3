use std::fs;

use nomafl_core::fl::idx::{encode_images, encode_labels, parse_images, IdxImages};
use nomafl_core::fl::{
    self, aggregate, evaluate, load_idx, partition_noniid, Dataset, LocalUpdate, Mlp, PartitionSpec,
};
use nomafl_core::{seed, Execution};
use proptest::prelude::*;
use rand::Rng;

fn fixture(count: usize) -> (IdxImages, Vec<u8>) {
    let pixels = (0..count * 784).map(|i| (i * 31 % 256) as u8).collect();
    let images = IdxImages {
        count,
        rows: 28,
        cols: 28,
        pixels,
    };
    let labels = (0..count).map(|i| (i % 10) as u8).collect();
    (images, labels)
}

#[test]
fn idx_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = fixture(10);
    let ip = dir.path().join("images");
    let lp = dir.path().join("labels");
    fs::write(&ip, encode_images(&images)).unwrap();
    fs::write(&lp, encode_labels(&labels)).unwrap();
    let data = load_idx(&ip, &lp).unwrap();
    assert_eq!(data.len(), 10);
    assert_eq!(data.dim(), 784);
    assert_eq!(data.label(3), 3);
    assert!((data.sample(0)[1] - 31.0 / 255.0).abs() < 1e-6);

    let mut bad = encode_images(&images);
    bad[3] = 0x01;
    assert!(parse_images(&bad).unwrap_err().to_string().contains("offset 0"));

    let mut wrong = labels.clone();
    wrong[0] = 10;
    fs::write(&lp, encode_labels(&wrong)).unwrap();
    assert!(load_idx(&ip, &lp).is_err());
}

#[test]
fn gradients_match_finite_differences_on_seeded_networks() {
    for s in 0..5u64 {
        let mut rng = seed::keyed_rng(s, &[]);
        let sizes = [rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..5)];
        let m = Mlp::new(&sizes).unwrap();
        let theta: Vec<f64> = (0..m.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let features: Vec<f32> = (0..3 * sizes[0]).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..3).map(|_| rng.random_range(0..sizes[2] as u8)).collect();
        let data = Dataset::new(sizes[0], features, labels).unwrap();
        let idx = [0, 1, 2];
        let mut grad = vec![0.0; theta.len()];
        m.batch_gradient(&theta, &data, &idx, &mut grad);
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (m.loss(&up, &data, &idx) - m.loss(&down, &data, &idx)) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(err <= 1e-4, "seed {s} coordinate {i}: {fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn evaluation_agrees_across_modes() {
    let data = fl::synthetic(500, 784, 0.35, 2);
    let m = Mlp::lenet_300_100();
    let theta = m.init(3);
    let idx: Vec<usize> = (0..data.len()).collect();
    assert_eq!(
        evaluate(&m, &theta, &data, &idx, Execution::Sequential),
        evaluate(&m, &theta, &data, &idx, Execution::Parallel)
    );
}

#[test]
fn whole_dataset_to_one_device() {
    let labels: Vec<u8> = (0..50).map(|i| (i % 10) as u8).collect();
    let p = partition_noniid(&labels, PartitionSpec::new(1), 4).unwrap();
    assert_eq!(p.shards[0].len(), 50);
    assert_eq!(p.weights(), vec![1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn partition_covers_every_sample_once(
        n in 50usize..800,
        devices in 1usize..40,
        seed_value in any::<u64>(),
    ) {
        prop_assume!(devices <= n);
        let labels: Vec<u8> = (0..n).map(|i| (i * 7 % 10) as u8).collect();
        let p = partition_noniid(&labels, PartitionSpec::new(devices), seed_value).unwrap();
        prop_assert_eq!(p.shards.len(), devices);
        let mut seen: Vec<usize> = p.shards.iter().flat_map(|s| s.indices()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
        prop_assert!(p.shards.iter().all(|s| !s.train.is_empty()));
        let total: f64 = p.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(p.clone(), partition_noniid(&labels, PartitionSpec::new(devices), seed_value).unwrap());
    }

    #[test]
    fn aggregation_is_a_convex_combination(
        deltas in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 4), 1usize..100), 1..6),
    ) {
        let theta = vec![0.5, -0.25, 1.0, 0.0];
        let updates: Vec<LocalUpdate> = deltas
            .iter()
            .map(|(d, n)| LocalUpdate { device: 0, delta: d.clone(), samples: *n, bit_width: 32 })
            .collect();
        let out = aggregate(&theta, &updates).unwrap();
        for i in 0..4 {
            let moved = theta[i] - out[i];
            let lo = deltas.iter().map(|(d, _)| d[i]).fold(f64::INFINITY, f64::min);
            let hi = deltas.iter().map(|(d, _)| d[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(moved >= lo - 1e-12 && moved <= hi + 1e-12);
        }
    }
}
