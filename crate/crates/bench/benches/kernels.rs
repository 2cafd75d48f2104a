use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use survnet_core::fft::{circular_convolve_direct, circular_convolve_fft};
use survnet_core::model::{Model, ModelConfig};
use survnet_core::preprocess::Modality;
use survnet_core::sketch::{compact_bilinear, random_set, tensor_sketch, SketchPlan};
use survnet_core::tensor::{Tape, Tensor};

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn circular_convolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("circular_convolution");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for d in [256usize, 1024, 4096] {
        let (a, b) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
        group.bench_with_input(BenchmarkId::new("direct", d), &d, |bench, _| {
            bench.iter(|| circular_convolve_direct(black_box(&a), black_box(&b)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fft", d), &d, |bench, _| {
            bench.iter(|| circular_convolve_fft(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn sketches(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_vec(&mut rng, 64);
    let set = random_set(&mut rng, 4, 64);
    for d in [512usize, 2048] {
        let plan = SketchPlan::new(64, d, 7).unwrap();
        c.bench_function(&format!("tensor_sketch/c64_d{d}"), |b| {
            b.iter(|| tensor_sketch(black_box(&x), &plan).unwrap())
        });
        c.bench_function(&format!("compact_bilinear/4x64_d{d}"), |b| {
            b.iter(|| compact_bilinear(black_box(&set), &plan).unwrap())
        });
    }
}

fn conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::from_fn(&[16, 16, 16, 16], |_| rng.gen_range(-1.0f32..1.0));
    let w = Tensor::from_fn(&[16, 16, 3, 3], |_| rng.gen_range(-0.1f32..0.1));
    c.bench_function("conv2d/16x16x16x16_k3_fwd_bwd", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let wv = tape.param(w.clone());
            let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
            let s = tape.sum(y).unwrap();
            tape.backward(s).unwrap()
        })
    });
}

fn branch_forward(c: &mut Criterion) {
    let model = Model::new(ModelConfig::toy(8)).map_or_else(
        |_| {
            let mut cfg = ModelConfig::toy(8);
            cfg.branch.final_pool = 2;
            Model::new(cfg).unwrap()
        },
        |m| m,
    );
    let params = model.init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = Tensor::from_fn(&[16, 3, 8, 8], |_| rng.gen_range(-1.0f32..1.0));
    c.bench_function("branch_forward/toy_p8_b16", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, false);
            let x = tape.constant(img.clone());
            model.branch_forward(&mut tape, &vars, Modality::T1, x).unwrap()
        })
    });
}

criterion_group!(benches, circular_convolution, sketches, conv2d, branch_forward);
criterion_main!(benches);
