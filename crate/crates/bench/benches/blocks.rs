use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use cmmlp_bench::{desk_model, noise};
use cmmlp_core::data::{generate, SynthSpec};
use cmmlp_core::mfi::{self, MfiConfig};
use cmmlp_core::nn::{self, ConvSpec};
use cmmlp_core::{network, Graph, ParamStore, TrainConfig, Trainer};

fn conv(c: &mut Criterion) {
    let spec = ConvSpec::same3(16, 16);
    let params = ParamStore::<f32>::initialize(&spec.params("conv", 2.0), 0).unwrap();
    let x = noise(&[16, 64, 64], 1);
    c.bench_function("conv3x3 16->16 at 64x64", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let vars = params.bind(&mut g).unwrap();
            let xv = g.input("x", x.clone()).unwrap();
            black_box(nn::conv2d(&mut g, xv, &spec, &vars, "conv").unwrap());
        })
    });
}

fn mfi_block(c: &mut Criterion) {
    let cfg = MfiConfig::new(32, 16).unwrap();
    let params = ParamStore::<f32>::initialize(&cfg.param_specs("mfi"), 0).unwrap();
    let x = noise(&[32, 16, 16], 2);
    c.bench_function("mfi_block 32ch at 16x16, forward+backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let vars = params.bind(&mut g).unwrap();
            let xv = g.input("x", x.clone()).unwrap();
            let y = mfi::mfi_block(&mut g, xv, &cfg, &vars, "mfi").unwrap();
            let s = g.sum(y).unwrap();
            black_box(g.backward(s).unwrap());
        })
    });
}

fn forward_full(c: &mut Criterion) {
    let (cfg, params) = desk_model(128);
    let x = noise(&[3, 128, 128], 3).map(|v| (v + 1.0) / 2.0);
    c.bench_function("predict 128x128", |b| {
        b.iter(|| black_box(network::predict(&cfg, &params, &x).unwrap()))
    });
}

fn train_step(c: &mut Criterion) {
    let (cfg, params) = desk_model(128);
    let batch = generate(&SynthSpec { count: 2, ..SynthSpec::default() }).unwrap();
    let tcfg = TrainConfig { deterministic: true, ..TrainConfig::default() };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("step, batch of 2 at 128x128", |b| {
        b.iter_batched(
            || Trainer::new(cfg.clone(), tcfg.clone(), params.clone()).unwrap(),
            |mut t| black_box(t.step(&batch).unwrap()),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, conv, mfi_block, forward_full, train_step);
criterion_main!(benches);
