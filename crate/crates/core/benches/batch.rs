use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use taagcn::harness::{synth_generate, Exec, Prepared, SynthSpec, TrainConfig};
use taagcn::keypoints::{KeypointSample, SkeletonHierarchy};
use taagcn::network::{forward, Mode, ParamStore};
use taagcn::tensor::Tape;

fn batch_gradients(c: &mut Criterion) {
    let cfg = TrainConfig {
        patch_size: 8,
        max_age: 10,
        ..TrainConfig::default()
    };
    let samples = synth_generate(&SynthSpec {
        num_samples: 64,
        patch_size: 8,
        ..SynthSpec::default()
    });
    let refs: Vec<&KeypointSample> = samples.iter().collect();
    let prepared = Prepared::fit(&cfg, &refs, SkeletonHierarchy::default(), None).expect("prepare");
    let net = cfg.network();
    let params = ParamStore::<f32>::init(
        &net,
        &prepared.adjacency.a_f.to_tensor(),
        &prepared.adjacency.a_z.to_tensor(),
        cfg.seed,
    );
    let graphs: Vec<_> = samples[..16]
        .iter()
        .map(|s| prepared.graph::<f32>(&cfg, s).expect("graph"))
        .collect();

    let mut group = c.benchmark_group("batch_of_16");
    group.sample_size(10);
    for exec in [Exec::Sequential, Exec::Parallel] {
        group.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                exec.map(&graphs, |_, g| {
                    let mut tape = Tape::new();
                    let f = forward(&mut tape, &params, g, &net, Mode::Train, None).expect("forward");
                    tape.backward(f.loss).expect("backward");
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients);
criterion_main!(benches);
