use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nomafl_core::channel;
use nomafl_core::exec::{self, Execution};
use nomafl_core::fl::{self, Mlp, TrainConfig};
use nomafl_core::sched_graph::{sequential_schedule, SchedulingGraph, DEFAULT_GRAPH_CAP};
use nomafl_core::seed;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn gains(devices: usize, rounds: usize) -> Vec<Vec<f64>> {
    (0..rounds)
        .map(|t| {
            (0..devices)
                .map(|m| channel::draw_channel(7, m, t, 1e-5).squared_gain())
                .collect()
        })
        .collect()
}

fn group_rate(g: &[Vec<f64>], group: &[usize], t: usize) -> f64 {
    let gains: Vec<f64> = group.iter().map(|&m| g[t][m]).collect();
    let powers = vec![0.01; group.len()];
    channel::noma_rates(&powers, &gains, 1.6e-14).unwrap().sum_rate()
}

fn scheduling(c: &mut Criterion) {
    let mut group = c.benchmark_group("schedule");
    let g = gains(30, 10);
    for mode in MODES {
        group.bench_with_input(
            BenchmarkId::new("graph_build", format!("{mode:?}")),
            &mode,
            |b, &mode| {
                b.iter(|| {
                    SchedulingGraph::build(30, 3, 10, DEFAULT_GRAPH_CAP, mode, |grp, t| group_rate(&g, grp, t))
                        .unwrap()
                        .len()
                })
            },
        );
    }
    let g = gains(300, 35);
    for mode in MODES {
        group.bench_with_input(
            BenchmarkId::new("sequential", format!("{mode:?}")),
            &mode,
            |b, &mode| b.iter(|| sequential_schedule(300, 3, 35, mode, |grp, t| group_rate(&g, grp, t))),
        );
    }
    group.finish();
}

fn learning(c: &mut Criterion) {
    let data = fl::synthetic(1200, 784, 0.35, 3);
    let model = Mlp::lenet_300_100();
    let theta = model.init(1);
    let all: Vec<usize> = (0..data.len()).collect();
    let shards: Vec<&[usize]> = all.chunks(100).take(3).collect();
    let cfg = TrainConfig::default();

    let mut group = c.benchmark_group("learning");
    group.sample_size(10);
    for mode in MODES {
        group.bench_with_input(BenchmarkId::new("evaluate", format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| fl::evaluate(&model, black_box(&theta), &data, &all, mode))
        });
        group.bench_with_input(
            BenchmarkId::new("local_train_group", format!("{mode:?}")),
            &mode,
            |b, &mode| {
                b.iter(|| {
                    exec::map(mode, &shards, |shard| {
                        let mut rng = seed::keyed_rng(5, &[shard[0] as u64]);
                        fl::local_train(&model, &theta, &data, shard, shard.len(), &cfg, &mut rng, 0, 0).unwrap()
                    })
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, scheduling, learning);
criterion_main!(benches);
