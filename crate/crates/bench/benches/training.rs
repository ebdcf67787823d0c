use criterion::{criterion_group, criterion_main, Criterion};
use dada_bench::synth_default;
use dada_core::trainer::{HyperParams, Trainer};
use dada_core::ModelSpec;
use std::hint::black_box;

fn training_step(c: &mut Criterion) {
    let ds = synth_default();
    let mut group = c.benchmark_group("training_step");
    group.sample_size(20);
    for (name, dada) in [("dada", true), ("proxy_only", false)] {
        let hp = HyperParams {
            dada_enabled: dada,
            samples_per_class: 8,
            warmup_epochs: 0,
            ..HyperParams::default()
        };
        let mut trainer = Trainer::new(hp, &ModelSpec::default(), ds.dim(), ds.num_classes()).unwrap();
        group.bench_function(name, |bench| bench.iter(|| black_box(trainer.step(&ds).unwrap().objective)));
    }
    group.finish();
}

criterion_group!(benches, training_step);
criterion_main!(benches);
