//! Central finite-difference checks of tape gradients at 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::model::{Batch, FusionMode, LossWeights, Model, ModelConfig, BranchConfig, ParamVars};
use crate::preprocess::{Image2D, Modality, OSClass, Sample, SupplementalFeatures};
use crate::sketch::{tape_compact_bilinear, tape_tensor_sketch, SketchPlan};
use crate::tensor::{Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Relative error `|a - n| / max(|a|, |n|)` over the checked coordinates,
/// with a small floor on the denominator.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(analytic).max(norm(numeric)).max(1e-7)
}

/// Compares the tape gradient of `build` against central differences.
///
/// `build` maps leaf handles (one per input) to an output of any shape; the
/// output is reduced to a scalar by a fixed random weighting. Only inputs
/// flagged in `trainable` are differentiated; `coords` limits how many random
/// coordinates of each such input are perturbed.
pub fn check<F>(
    inputs: &[Tensor<f64>],
    trainable: &[bool],
    coords: Option<usize>,
    rng: &mut impl Rng,
    build: F,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    assert_eq!(inputs.len(), trainable.len());
    let mut probe = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = build(&mut probe, &vars)?;
    let out_shape = probe.value(out).shape().to_vec();
    let weights: Tensor<f64> = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));

    let eval = |values: &[Tensor<f64>], record_grad: bool| -> Result<(f64, Option<Vec<Tensor<f64>>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .zip(trainable)
            .map(|(t, &g)| tape.leaf(t.clone(), g && record_grad))
            .collect();
        let out = build(&mut tape, &vars)?;
        let root = if tape.value(out).numel() == 1 && out_shape.is_empty() {
            out
        } else {
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out, w)?;
            tape.sum(prod)?
        };
        let value = tape.value(root).item();
        if !record_grad {
            return Ok((value, None));
        }
        let grads = tape.backward(root)?;
        let g = vars
            .iter()
            .zip(values)
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok((value, Some(g)))
    };

    let (_, grads) = eval(inputs, true)?;
    let grads = grads.expect("gradients requested");
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        if !trainable[i] {
            continue;
        }
        let n = input.numel();
        let picks: Vec<usize> = match coords {
            Some(c) if c < n => (0..c).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for j in picks {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + DEFAULT_EPS;
            let (plus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig - DEFAULT_EPS;
            let (minus, _) = eval(&work, false)?;
            work[i].data_mut()[j] = orig;
            numeric.push((plus - minus) / (2.0 * DEFAULT_EPS));
            analytic.push(grads[i].data()[j]);
        }
    }
    Ok(relative_error(&analytic, &numeric))
}

/// Uniform values in `+-[0.1, 1]`, kept away from ReLU / sign kinks.
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Result of checking one operation over several seeds.
#[derive(Debug, Clone, Serialize)]
pub struct OpReport {
    pub name: String,
    pub seeds: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

type Case = fn(&mut ChaCha8Rng) -> Result<f64>;

fn case_matmul(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
    let inputs = [uniform(rng, &[m, k]), uniform(rng, &[k, n])];
    check(&inputs, &[true, true], None, rng, |t, v| t.matmul(v[0], v[1]))
}

fn case_add_bias(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [uniform(rng, &[3, 4]), uniform(rng, &[4])];
    check(&inputs, &[true, true], None, rng, |t, v| t.add_bias(v[0], v[1]))
}

fn case_add(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [uniform(rng, &[2, 3]), uniform(rng, &[2, 3])];
    check(&inputs, &[true, true], None, rng, |t, v| t.add(v[0], v[1]))
}

fn case_mul(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [uniform(rng, &[5]), uniform(rng, &[5])];
    check(&inputs, &[true, true], None, rng, |t, v| t.mul(v[0], v[1]))
}

fn case_scale(rng: &mut ChaCha8Rng) -> Result<f64> {
    let factor = rng.gen_range(-2.0..2.0);
    let inputs = [uniform(rng, &[4])];
    check(&inputs, &[true], None, rng, move |t, v| t.scale(v[0], factor))
}

fn case_relu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [away_from_zero(rng, &[3, 4])];
    check(&inputs, &[true], None, rng, |t, v| t.relu(v[0]))
}

fn case_reshape_sum(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [uniform(rng, &[2, 6])];
    check(&inputs, &[true], None, rng, |t, v| {
        let r = t.reshape(v[0], &[3, 4])?;
        let sq = t.mul(r, r)?;
        t.sum(sq)
    })
}

fn case_concat(rng: &mut ChaCha8Rng) -> Result<f64> {
    let axis = rng.gen_range(0..2);
    let (a, b) = if axis == 0 { ([2, 3], [1, 3]) } else { ([2, 3], [2, 2]) };
    let inputs = [uniform(rng, &a), uniform(rng, &b)];
    check(&inputs, &[true, true], None, rng, move |t, v| t.concat(&[v[0], v[1]], axis))
}

fn case_conv2d(rng: &mut ChaCha8Rng) -> Result<f64> {
    let stride = rng.gen_range(1..3);
    let pad = rng.gen_range(0..2);
    let batched = rng.gen::<bool>();
    let x_shape: Vec<usize> = if batched { vec![2, 2, 4, 4] } else { vec![2, 4, 4] };
    let inputs = [uniform(rng, &x_shape), uniform(rng, &[3, 2, 3, 3]), uniform(rng, &[3])];
    check(&inputs, &[true, true, true], None, rng, move |t, v| {
        t.conv2d(v[0], v[1], Some(v[2]), stride, pad)
    })
}

fn case_maxpool(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [uniform(rng, &[2, 4, 4])];
    let k = rng.gen_range(1..3);
    check(&inputs, &[true], None, rng, move |t, v| t.maxpool2d(v[0], 2, k))
}

fn case_softmax_xent(rng: &mut ChaCha8Rng) -> Result<f64> {
    let labels: Vec<usize> = (0..3).map(|_| rng.gen_range(0..4)).collect();
    let inputs = [Tensor::from_fn(&[3, 4], |_| rng.gen_range(-3.0..3.0))];
    check(&inputs, &[true], None, rng, move |t, v| t.softmax_cross_entropy(v[0], &labels))
}

fn case_count_sketch(rng: &mut ChaCha8Rng) -> Result<f64> {
    let plan = SketchPlan::new(6, 4, rng.gen())?;
    let inputs = [uniform(rng, &[2, 6])];
    check(&inputs, &[true], None, rng, move |t, v| {
        let (h, s) = plan.first();
        t.count_sketch(v[0], h, s, 4)
    })
}

fn case_circular_convolve(rng: &mut ChaCha8Rng) -> Result<f64> {
    // power-of-two (FFT) and non-power-of-two (direct) lengths
    let d = if rng.gen::<bool>() { 8 } else { 6 };
    let inputs = [uniform(rng, &[2, d]), uniform(rng, &[2, d])];
    check(&inputs, &[true, true], None, rng, |t, v| t.circular_convolve(v[0], v[1]))
}

fn case_signed_sqrt(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [away_from_zero(rng, &[6])];
    check(&inputs, &[true], None, rng, |t, v| t.signed_sqrt(v[0], 1e-8))
}

fn case_l2_normalize(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [uniform(rng, &[2, 5])];
    check(&inputs, &[true], None, rng, |t, v| t.l2_normalize(v[0], 1e-12))
}

fn case_tensor_sketch(rng: &mut ChaCha8Rng) -> Result<f64> {
    let plan = SketchPlan::new(5, 16, rng.gen())?;
    let inputs = [uniform(rng, &[2, 5])];
    check(&inputs, &[true], None, rng, move |t, v| tape_tensor_sketch(t, v[0], &plan))
}

fn case_compact_bilinear(rng: &mut ChaCha8Rng) -> Result<f64> {
    let plan = SketchPlan::new(5, 16, rng.gen())?;
    let inputs = [uniform(rng, &[1, 5]), uniform(rng, &[1, 5]), uniform(rng, &[1, 5])];
    check(&inputs, &[true, true, true], None, rng, move |t, v| {
        tape_compact_bilinear(t, v, &plan)
    })
}

/// Smallest model exercising every layer type.
pub fn tiny_model_config(fusion: FusionMode, signed_sqrt_l2: bool, sketch_seed: u64) -> ModelConfig {
    ModelConfig {
        branch: BranchConfig {
            channels_per_stage: vec![2, 3],
            blocks_per_stage: vec![1, 1],
            feature_dim: 5,
            final_pool: 2,
        },
        num_classes: OSClass::COUNT,
        image_size: 4,
        sketch_dim: 8,
        sketch_seed,
        signed_sqrt_l2,
        fusion,
    }
}

/// Random samples matching a model config.
pub fn random_samples(rng: &mut impl Rng, n: usize, image_size: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample {
            id: format!("g{i}"),
            label: OSClass::from_index(rng.gen_range(0..3)).unwrap(),
            images: std::array::from_fn(|_| {
                let data = (0..3 * image_size * image_size)
                    .map(|_| rng.gen_range(-1.0f32..1.0))
                    .collect();
                Image2D::new(image_size, data).unwrap()
            }),
            features: SupplementalFeatures {
                s_total: rng.gen(),
                s1: rng.gen(),
                s2: rng.gen(),
                s3: rng.gen(),
                s_age: rng.gen(),
            },
        })
        .collect()
}

fn model_inputs(model: &Model, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let params = model.init_params::<f64>(rng);
    // Nonzero biases so no activation sits exactly on a ReLU kink.
    params
        .tensors()
        .iter()
        .map(|t| {
            if t.shape().len() == 1 {
                Tensor::from_fn(t.shape(), |_| rng.gen_range(-0.3..0.3))
            } else {
                t.clone()
            }
        })
        .collect()
}

fn trainable_with_prefix(model: &Model, prefixes: &[&str]) -> Vec<bool> {
    model
        .param_specs()
        .iter()
        .map(|s| prefixes.iter().any(|p| s.name.starts_with(p)))
        .collect()
}

fn case_branch(rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = Model::new(tiny_model_config(FusionMode::Full, false, rng.gen()))?;
    let inputs = model_inputs(&model, rng);
    let samples = random_samples(rng, 2, 4);
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::<f64>::from_samples(&refs, 4, |_, img| img.data.clone())?;
    let modality = Modality::ALL[rng.gen_range(0..4)];
    let trainable = trainable_with_prefix(&model, &[&format!("{}.", modality.name())]);
    check(&inputs, &trainable, Some(6), rng, move |t, v| {
        let img = t.constant(batch.images[modality.index()].clone());
        let (feat, logits) = model.branch_forward(t, &ParamVars(v.to_vec()), modality, img)?;
        let logits = logits.expect("full model has branch heads");
        let f = t.sum(feat)?;
        let f = t.reshape(f, &[1])?;
        let l = t.reshape(logits, &[6])?;
        t.concat(&[f, l], 0)
    })
}

fn case_shared(rng: &mut ChaCha8Rng) -> Result<f64> {
    let signed = rng.gen::<bool>();
    let model = Model::new(tiny_model_config(FusionMode::Full, signed, rng.gen()))?;
    let mut inputs = model_inputs(&model, rng);
    let n_params = inputs.len();
    let mut trainable = trainable_with_prefix(&model, &["shared."]);
    for _ in 0..4 {
        inputs.push(Tensor::from_fn(&[2, 5], |_| rng.gen_range(0.1..1.0)));
        trainable.push(true);
    }
    check(&inputs, &trainable, None, rng, move |t, v| {
        let params = ParamVars(v[..n_params].to_vec());
        model.shared_forward(t, &params, &v[n_params..])
    })
}

fn case_fusion(rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = Model::new(tiny_model_config(FusionMode::Full, false, rng.gen()))?;
    let inputs = model_inputs(&model, rng);
    let samples = random_samples(rng, 3, 4);
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::<f64>::from_samples(&refs, 4, |_, img| img.data.clone())?;
    // End-to-end: fused logits w.r.t. conv weights of one branch and the
    // fusion layer itself.
    let trainable = trainable_with_prefix(&model, &["t1ce.s", "fusion."]);
    check(&inputs, &trainable, Some(6), rng, move |t, v| {
        let params = ParamVars(v.to_vec());
        let out = model.forward(t, &params, &batch, LossWeights::default())?;
        Ok(out.fused_logits)
    })
}

fn case_total_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mode = [FusionMode::Full, FusionMode::BranchOnly, FusionMode::SharedOnly][rng.gen_range(0..3)];
    let model = Model::new(tiny_model_config(mode, false, rng.gen()))?;
    let inputs = model_inputs(&model, rng);
    let samples = random_samples(rng, 3, 4);
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::<f64>::from_samples(&refs, 4, |_, img| img.data.clone())?;
    let trainable = vec![true; inputs.len()];
    let weights = LossWeights {
        lambda1: rng.gen_range(0.0..1.0),
        lambda2: rng.gen_range(0.0..1.0),
    };
    check(&inputs, &trainable, Some(2), rng, move |t, v| {
        let out = model.forward(t, &ParamVars(v.to_vec()), &batch, weights)?;
        Ok(out.total)
    })
}

/// Every differentiable operation in the pipeline.
pub const OPS: &[(&str, Case)] = &[
    ("matmul", case_matmul),
    ("add_bias", case_add_bias),
    ("add", case_add),
    ("mul", case_mul),
    ("scale", case_scale),
    ("relu", case_relu),
    ("reshape_sum", case_reshape_sum),
    ("concat", case_concat),
    ("conv2d", case_conv2d),
    ("maxpool2d", case_maxpool),
    ("softmax_cross_entropy", case_softmax_xent),
    ("count_sketch", case_count_sketch),
    ("circular_convolve", case_circular_convolve),
    ("signed_sqrt", case_signed_sqrt),
    ("l2_normalize", case_l2_normalize),
    ("tensor_sketch", case_tensor_sketch),
    ("compact_bilinear", case_compact_bilinear),
    ("branch_forward", case_branch),
    ("shared_forward", case_shared),
    ("fuse_forward", case_fusion),
    ("total_loss", case_total_loss),
];

/// Runs every op over `seeds` seeds and reports the worst relative error.
pub fn run_suite(seeds: usize, base_seed: u64, tolerance: f64) -> Result<Vec<OpReport>> {
    OPS.iter()
        .enumerate()
        .map(|(i, (name, case))| {
            let mut worst = 0f64;
            for s in 0..seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add((i as u64) << 20 | s as u64));
                let err = case(&mut rng)?;
                worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
            }
            Ok(OpReport {
                name: name.to_string(),
                seeds,
                max_rel_err: worst,
                passed: worst < tolerance,
            })
        })
        .collect()
}
