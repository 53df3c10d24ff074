use criterion::{black_box, criterion_group, criterion_main, Criterion};
use gazetrack::data::{synth_generate, SynthConfig};
use gazetrack::geometry::DeviceTable;
use gazetrack::model::{ArchitectureConfig, ModelConfig};
use gazetrack::{ConvSpec, Graph, Orientation, Tensor};

fn values(dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |i| ((i * 7919) % 257) as f32 / 257.0 - 0.5)
}

fn conv(c: &mut Criterion) {
    let x = values(&[16, 12, 15, 15]);
    let w = values(&[32, 12, 5, 5]).with_requires_grad();
    let b = values(&[32]).with_requires_grad();
    let spec = ConvSpec::square(5, 1, 2, 12, 32);
    c.bench_function("conv2d 5x5 12->32 on 16x15x15 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (g.constant(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
            let y = g.conv2d(xi, wi, bi, spec).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap();
            black_box(g.grad(wi).is_some())
        })
    });
}

fn gemm(c: &mut Criterion) {
    let x = values(&[256, 320]);
    let w = values(&[128, 320]).with_requires_grad();
    let b = values(&[128]).with_requires_grad();
    c.bench_function("fully connected 256x320 -> 128 forward+backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let (xi, wi, bi) = (g.constant(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
            let y = g.fully_connected(xi, wi, Some(bi)).unwrap();
            let s = g.sum(y);
            g.backward(s).unwrap();
            black_box(g.grad(wi).is_some())
        })
    });
}

fn forward(c: &mut Criterion) {
    let mut cfg = SynthConfig::desk();
    cfg.n_subjects = 1;
    cfg.dots_per_session = 16;
    cfg.frames_per_dot = 4;
    let dev = DeviceTable::builtin().get("synthPhone").unwrap().clone();
    let (_, frames) = synth_generate(&cfg, &dev, Orientation::Portrait, 0).unwrap();
    let refs: Vec<_> = frames.iter().collect();
    let mc = ModelConfig::ITracker(ArchitectureConfig::desk());
    let params = mc.build(0).unwrap();
    let batch = mc.batch(&refs).unwrap();
    c.bench_function("desk network forward, batch 64", |bench| {
        bench.iter(|| black_box(mc.predict(&params, &batch).unwrap()))
    });
}

criterion_group!(benches, conv, gemm, forward);
criterion_main!(benches);
