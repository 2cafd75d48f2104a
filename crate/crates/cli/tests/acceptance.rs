//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use survnet_core::data::{generate_records, SignalMode, SynthSpec};
use survnet_core::fft::{circular_convolve_direct, circular_convolve_fft};
use survnet_core::gradcheck::{random_samples, run_suite};
use survnet_core::harness::{evaluate_params, fit, make_folds, run_cv, CvOptions, Metrics, TrainConfig};
use survnet_core::model::{Batch, FusionMode, LossWeights, Model, ModelConfig};
use survnet_core::preprocess::{
    os_class, preprocess_all, project_axes_raw, supplemental_features, OSClass, PreprocessConfig, Sample, Volume3D,
    VolumeKind, DAYS_PER_MONTH,
};
use survnet_core::sketch::{approximation_study, dot, exact_bilinear, DescriptorSet, StudyConfig};
use survnet_core::tensor::Tape;

/// Projected image side for the learning criteria.
const IMAGE_SIZE: usize = 8;
const CROP: usize = 24;
const CV_EPOCHS: usize = 20;
const SINGLE_SPLIT_EPOCHS: usize = 30;
const DATA_SEED: u64 = 1;
const TRAIN_SEED: u64 = 0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

fn toy_model(fusion: FusionMode) -> ModelConfig {
    let mut cfg = ModelConfig::toy(IMAGE_SIZE);
    cfg.branch.final_pool = 2;
    cfg.fusion = fusion;
    cfg
}

fn cohort(signal: SignalMode, noise_sigma: f64) -> Vec<Sample> {
    let spec = SynthSpec {
        n_subjects: 120,
        signal,
        noise_sigma,
        seed: DATA_SEED,
        ..SynthSpec::default()
    };
    let records = generate_records(&spec).expect("synthetic cohort");
    let cfg = PreprocessConfig {
        crop: CROP,
        size: IMAGE_SIZE,
        ..PreprocessConfig::default()
    };
    preprocess_all(&records, &cfg).expect("preprocess")
}

fn cv_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: CV_EPOCHS,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let reports = run_suite(20, 2024, 1e-4).expect("gradient suite");
    let elapsed = t.elapsed();
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({:e})", r.name, r.max_rel_err))
        .collect();
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && elapsed < Duration::from_secs(60) && reports.len() >= 20,
        format!(
            "{} ops x 20 seeds, worst rel-err {worst:.3e}, {:.1}s, failed: {failed:?}",
            reports.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_bilinear_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0f64;
    for _ in 0..100 {
        let c = rng.gen_range(1..=16);
        let (n1, n2) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let mut set = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
        };
        let (xs, ys) = (set(n1), set(n2));
        let lhs = dot(
            &exact_bilinear(&DescriptorSet::new(xs.clone()).unwrap()).unwrap(),
            &exact_bilinear(&DescriptorSet::new(ys.clone()).unwrap()).unwrap(),
        );
        let mut rhs = 0.0;
        for x in &xs {
            for y in &ys {
                let k: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                rhs += k * k;
            }
        }
        worst = worst.max((lhs - rhs).abs() / rhs.abs().max(f64::MIN_POSITIVE));
    }
    outcome(worst < 1e-10, format!("100 set pairs, worst rel-err {worst:.3e}"))
}

fn c3_sketch_approximation() -> Outcome {
    let t = Instant::now();
    let rows = approximation_study(&StudyConfig {
        input_dim: 64,
        sketch_dims: vec![256, 512, 1024, 2048],
        pairs: 100,
        plans: 10,
        set_size: 4,
        seed: 3,
        time_direct: false,
    })
    .expect("study");
    let elapsed = t.elapsed();
    let errs: Vec<f64> = rows.iter().map(|r| r.mean_rel_err).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let last = *errs.last().unwrap();
    outcome(
        last < 0.25 && decreasing && elapsed < Duration::from_secs(120),
        format!(
            "mean rel-err by d=256..2048: {:?}, {:.1}s",
            errs.iter().map(|e| format!("{e:.4}")).collect::<Vec<_>>(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c4_fft() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims: Vec<usize> = (1..=12).map(|p| 1 << p).collect();
    let mut worst = 0f64;
    for i in 0..1000 {
        let d = dims[i % dims.len()];
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = circular_convolve_fft(&a, &b).unwrap();
        let slow = circular_convolve_direct(&a, &b).unwrap();
        worst = worst.max(rel_err(&fast, &slow));
    }
    let a: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let time = |f: &dyn Fn() -> Vec<f64>, reps: u32| {
        let t = Instant::now();
        for _ in 0..reps {
            std::hint::black_box(f());
        }
        t.elapsed().as_secs_f64() / reps as f64
    };
    let direct = time(&|| circular_convolve_direct(&a, &b).unwrap(), 5);
    let fft = time(&|| circular_convolve_fft(&a, &b).unwrap(), 50);
    let speedup = direct / fft;
    outcome(
        worst < 1e-6 && speedup >= 2.0,
        format!("1000 pairs d=2..4096, worst rel-err {worst:.3e}; d=4096 FFT speedup {speedup:.1}x"),
    )
}

fn c5_loss_composition() -> Outcome {
    let model = Model::new(toy_model(FusionMode::Full)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = model.init_params::<f32>(&mut rng);
    let w = LossWeights::default();
    let mut worst = 0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=4);
        let samples = random_samples(&mut rng, n, IMAGE_SIZE);
        let refs: Vec<&Sample> = samples.iter().collect();
        let batch = Batch::<f32>::from_samples(&refs, IMAGE_SIZE, |_, i| i.data.clone()).unwrap();
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let out = model.forward(&mut tape, &vars, &batch, w).unwrap();
        let v = |x| tape.value(x).item() as f64;
        let heads: f64 = out.branch_losses.iter().map(|&l| v(l)).sum::<f64>() + v(out.shared_loss.unwrap());
        let expect = 0.1 * heads + 0.5 * v(out.fusion_loss);
        let got = v(out.total);
        worst = worst.max((got - expect).abs() / expect.abs().max(1.0));
    }
    outcome(
        worst < 1e-6 && (w.lambda1, w.lambda2) == (0.1, 0.5),
        format!("100 batches at f32, lambda1=0.1 lambda2=0.5, worst deviation {worst:.3e}"),
    )
}

fn c6_metrics() -> Outcome {
    struct Case {
        confusion: [[u64; 3]; 3],
        accuracy: f64,
        precision: [f64; 3],
        recall: [f64; 3],
        zero_division: bool,
    }
    // Hand-worked one-vs-rest values; rows are true classes.
    let cases = [
        Case {
            confusion: [[2, 1, 0], [0, 3, 0], [1, 0, 2]],
            accuracy: 7.0 / 9.0,
            precision: [2.0 / 3.0, 3.0 / 4.0, 1.0],
            recall: [2.0 / 3.0, 1.0, 2.0 / 3.0],
            zero_division: false,
        },
        Case {
            confusion: [[5, 0, 0], [0, 4, 0], [0, 0, 1]],
            accuracy: 1.0,
            precision: [1.0, 1.0, 1.0],
            recall: [1.0, 1.0, 1.0],
            zero_division: false,
        },
        Case {
            confusion: [[1, 1, 0], [1, 1, 0], [0, 0, 0]],
            accuracy: 0.5,
            precision: [0.5, 0.5, 0.0],
            recall: [0.5, 0.5, 0.0],
            zero_division: true,
        },
        Case {
            confusion: [[0, 3, 1], [2, 0, 2], [1, 1, 0]],
            accuracy: 0.0,
            precision: [0.0, 0.0, 0.0],
            recall: [0.0, 0.0, 0.0],
            zero_division: true,
        },
        Case {
            confusion: [[4, 2, 1], [1, 5, 2], [0, 1, 6]],
            accuracy: 15.0 / 22.0,
            precision: [4.0 / 5.0, 5.0 / 8.0, 6.0 / 9.0],
            recall: [4.0 / 7.0, 5.0 / 8.0, 6.0 / 7.0],
            zero_division: false,
        },
    ];
    let mut bad = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let m = Metrics::from_confusion(c.confusion).unwrap();
        let p = c.precision.iter().sum::<f64>() / 3.0;
        let r = c.recall.iter().sum::<f64>() / 3.0;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        let per_class = (0..3).all(|k| close(m.per_class[k].precision, c.precision[k]) && close(m.per_class[k].recall, c.recall[k]));
        if !(m.accuracy == c.accuracy
            && close(m.precision, p)
            && close(m.recall, r)
            && close(m.f_score, f)
            && per_class
            && m.zero_division == c.zero_division)
        {
            bad.push(i);
        }
    }
    outcome(bad.is_empty(), format!("5 confusion matrices (one with zero denominators), mismatches: {bad:?}"))
}

fn c7_learning() -> Outcome {
    let t = Instant::now();
    let samples = cohort(SignalMode::Global, 0.1);
    let labels: Vec<OSClass> = samples.iter().map(|s| s.label).collect();
    let balanced = (0..3).all(|c| labels.iter().filter(|l| l.index() == c).count() == 40);

    // single split: train on the first fold's training portion
    let plan = make_folds(&labels, 10, 0.2, TRAIN_SEED).unwrap();
    let train: Vec<&Sample> = (0..samples.len()).filter(|&i| plan.assignment[i] != 0).map(|i| &samples[i]).collect();
    let model = Model::new(toy_model(FusionMode::Full)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(TRAIN_SEED);
    let init = model.init_params::<f32>(&mut rng);
    let cfg = TrainConfig {
        epochs: SINGLE_SPLIT_EPOCHS,
        ..cv_config(TRAIN_SEED)
    };
    let fitted = fit(&model, init, &train, &train, &cfg, &mut rng, 0).unwrap();
    let train_acc = evaluate_params(&model, &fitted.params, &train).unwrap().accuracy;
    let first_95 = fitted.history.iter().position(|h| h.val_accuracy >= 0.95);

    let cv = run_cv(&samples, &toy_model(FusionMode::Full), &cv_config(TRAIN_SEED), &CvOptions::default()).unwrap();
    let shuffled = run_cv(
        &samples,
        &toy_model(FusionMode::Full),
        &cv_config(TRAIN_SEED),
        &CvOptions {
            shuffle_labels: true,
            ..Default::default()
        },
    )
    .unwrap();
    let clean = cv.folds.iter().chain(&shuffled.folds).all(|f| f.audit.is_clean());
    let elapsed = t.elapsed();
    let chance = shuffled.report.mean.accuracy;
    outcome(
        balanced
            && train_acc >= 0.95
            && first_95.is_some()
            && cv.report.mean.accuracy >= 0.8
            && (chance - 1.0 / 3.0).abs() <= 0.15
            && clean
            && elapsed < Duration::from_secs(15 * 60),
        format!(
            "train acc {train_acc:.4} (first >=0.95 at epoch {}), 10-fold CV {:.4} +- {:.4}, shuffled {chance:.4}, {:.0}s",
            first_95.map_or("never".to_string(), |e| (e + 1).to_string()),
            cv.report.mean.accuracy,
            cv.report.std.accuracy,
            elapsed.as_secs_f64()
        ),
    )
}

fn c8_fusion_trend() -> Outcome {
    let samples = cohort(SignalMode::ModalitySpecific, 0.3);
    let acc = |mode| {
        run_cv(&samples, &toy_model(mode), &cv_config(TRAIN_SEED), &CvOptions::default())
            .unwrap()
            .report
            .mean
            .accuracy
    };
    let full = acc(FusionMode::Full);
    let branch = acc(FusionMode::BranchOnly);
    let shared = acc(FusionMode::SharedOnly);
    outcome(
        full >= branch && full >= shared,
        format!("mean CV accuracy: full {full:.4}, branch-only {branch:.4}, shared-only {shared:.4}"),
    )
}

fn c9_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_survnet");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().expect("run survnet");
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["synth", "--out", data.to_str().unwrap(), "--n", "24", "--seed", "9", "--dims", "16,16,16"]);
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "epochs = 2\nfolds = 3\nbatch_size = 8\naugment = false\ncrop = 12\nseed = 9\n").unwrap();
    let manifest = data.join("manifest.csv");
    for name in ["a", "b"] {
        run(&[
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join(name).to_str().unwrap(),
        ]);
    }
    let files = ["report.json", "report.csv", "config.toml", "checkpoints/fold_00.ckpt", "checkpoints/fold_01.ckpt", "checkpoints/fold_02.ckpt"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| {
            let a = std::fs::read(dir.path().join("a").join(f)).ok();
            a.is_none() || a != std::fs::read(dir.path().join("b").join(f)).ok()
        })
        .collect();
    outcome(differing.is_empty(), format!("two `train` runs, {} artifacts compared, missing or differing: {differing:?}", files.len()))
}

fn c10_preprocess() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();
    for i in 0..1000 {
        // projection mean preservation
        let p = rng.gen_range(1..=9);
        let v = Volume3D::from_fn([p; 3], VolumeKind::Intensity, |_, _, _| rng.gen_range(-5.0..5.0)).unwrap();
        let mean = v.voxels().iter().map(|&x| x as f64).sum::<f64>() / v.voxels().len() as f64;
        let raw = project_axes_raw(&v).unwrap();
        for ch in raw.chunks(p * p) {
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            if (m - mean).abs() > 1e-9 * mean.abs().max(1.0) {
                failures.push(format!("{i}: projection mean"));
            }
        }
        // supplemental proportions
        let dims = [rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6)];
        let mut mask = Volume3D::from_fn(dims, VolumeKind::Mask, |_, _, _| [0.0, 1.0, 2.0, 4.0][rng.gen_range(0..4)]).unwrap();
        if mask.voxels().iter().all(|&x| x == 0.0) {
            mask = Volume3D::from_fn(dims, VolumeKind::Mask, |_, _, _| 2.0).unwrap();
        }
        let brain = Volume3D::from_fn(dims, VolumeKind::Intensity, |_, _, _| rng.gen_range(0..2) as f32).unwrap();
        let s = supplemental_features(&mask, &brain, rng.gen_range(20.0..80.0), 0.01).unwrap();
        if (s.s1 + s.s2 + s.s3 - 1.0).abs() > 1e-12 || !(0.0..=1.0).contains(&s.s_total) {
            failures.push(format!("{i}: supplemental"));
        }
        // os_class monotone and boundaries
        let (a, b) = (rng.gen_range(1.0..3000.0), rng.gen_range(1.0..3000.0));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if os_class(lo, DAYS_PER_MONTH).unwrap() > os_class(hi, DAYS_PER_MONTH).unwrap() {
            failures.push(format!("{i}: monotone"));
        }
        let short = rng.gen_range(0.01..=10.0) * DAYS_PER_MONTH;
        let long = rng.gen_range(15.0..100.0) * DAYS_PER_MONTH;
        if os_class(short, DAYS_PER_MONTH).unwrap() != OSClass::Short || os_class(long, DAYS_PER_MONTH).unwrap() != OSClass::Long {
            failures.push(format!("{i}: boundary"));
        }
    }
    let exact = os_class(10.0 * DAYS_PER_MONTH, DAYS_PER_MONTH).unwrap() == OSClass::Short
        && os_class(15.0 * DAYS_PER_MONTH, DAYS_PER_MONTH).unwrap() == OSClass::Long
        && os_class(12.0 * DAYS_PER_MONTH, DAYS_PER_MONTH).unwrap() == OSClass::Mid;
    outcome(
        failures.is_empty() && exact,
        format!("1000 fuzzed inputs, {} failures {:?}", failures.len(), failures.iter().take(3).collect::<Vec<_>>()),
    )
}

fn main() -> ExitCode {
    // libtest-style flags (e.g. --nocapture) are accepted and ignored
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 gradient suite", c1_gradients),
        ("2 bilinear kernel identity", c2_bilinear_identity),
        ("3 sketch approximation", c3_sketch_approximation),
        ("4 FFT vs direct convolution", c4_fft),
        ("5 composite loss", c5_loss_composition),
        ("6 metrics oracle", c6_metrics),
        ("7 end-to-end learning", c7_learning),
        ("8 fusion trend", c8_fusion_trend),
        ("9 determinism", c9_determinism),
        ("10 preprocess invariants", c10_preprocess),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "criterion {name}: {} ({}; {:.1}s)",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!o.passed);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all criteria passed");
        ExitCode::SUCCESS
    }
}
