//! Compact bilinear pooling through tensor sketches.
//!
//! The bilinear descriptor `B(X) = sum_s x_s x_s^T` is `c x c`; its Frobenius
//! inner product with `B(Y)` equals `sum_{s,u} <x_s, y_u>^2`. A tensor sketch
//! `TS(x) = CS1(x) (*) CS2(x)` (circular convolution of two independent count
//! sketches) is an unbiased `d`-dimensional feature map for the kernel
//! `<x, y>^2`, so `C(X) = sum_s TS(x_s)` approximates `B(X)` in inner
//! product with `d << c^2`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::fft;
use crate::tensor::{Scalar, Tape, Var};

/// Frozen pair of count-sketch hashes defining one tensor sketch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchPlan {
    input_dim: usize,
    sketch_dim: usize,
    h1: Vec<usize>,
    h2: Vec<usize>,
    s1: Vec<i8>,
    s2: Vec<i8>,
    seed: u64,
}

impl SketchPlan {
    pub fn new(input_dim: usize, sketch_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || sketch_dim == 0 {
            return Err(Error::Config("sketch dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hashes = || -> Vec<usize> { (0..input_dim).map(|_| rng.gen_range(0..sketch_dim)).collect() };
        let h1 = hashes();
        let h2 = hashes();
        let mut signs = || -> Vec<i8> {
            (0..input_dim)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect()
        };
        let s1 = signs();
        let s2 = signs();
        Ok(SketchPlan {
            input_dim,
            sketch_dim,
            h1,
            h2,
            s1,
            s2,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sketch_dim(&self) -> usize {
        self.sketch_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first(&self) -> (&[usize], &[i8]) {
        (&self.h1, &self.s1)
    }

    pub fn second(&self) -> (&[usize], &[i8]) {
        (&self.h2, &self.s2)
    }
}

/// Local descriptors `x_s`, all of dimension `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet<T> {
    dim: usize,
    descriptors: Vec<Vec<T>>,
}

impl<T: Scalar> DescriptorSet<T> {
    pub fn new(descriptors: Vec<Vec<T>>) -> Result<Self> {
        let dim = descriptors.first().map_or(0, Vec::len);
        if let Some(bad) = descriptors.iter().find(|d| d.len() != dim) {
            return Err(dim_err!(
                "descriptor of length {} in a set of dimension {dim}",
                bad.len()
            ));
        }
        Ok(DescriptorSet { dim, descriptors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[T]> {
        self.descriptors.iter().map(Vec::as_slice)
    }

    fn nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Validation("descriptor set is empty".into()))
        } else {
            Ok(())
        }
    }
}

/// `out[j] = sum_{i : hash[i] = j} sign[i] * x[i]`
pub fn count_sketch<T: Scalar>(x: &[T], hash: &[usize], sign: &[i8], d: usize) -> Result<Vec<T>> {
    if hash.len() != x.len() || sign.len() != x.len() {
        return Err(dim_err!(
            "count sketch plan covers {} inputs, vector has {}",
            hash.len(),
            x.len()
        ));
    }
    let mut out = vec![T::zero(); d];
    for ((&xi, &h), &s) in x.iter().zip(hash).zip(sign) {
        if h >= d {
            return Err(dim_err!("hash bucket {h} out of range for sketch dim {d}"));
        }
        out[h] = out[h] + if s > 0 { xi } else { -xi };
    }
    Ok(out)
}

/// Which circular-convolution routine a sketch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvPath {
    Direct,
    /// FFT for power-of-two dimensions, direct otherwise.
    Auto,
}

pub fn tensor_sketch_with<T: Scalar>(x: &[T], plan: &SketchPlan, path: ConvPath) -> Result<Vec<T>> {
    if x.len() != plan.input_dim {
        return Err(dim_err!(
            "sketch plan expects dimension {}, got {}",
            plan.input_dim,
            x.len()
        ));
    }
    let a = count_sketch(x, &plan.h1, &plan.s1, plan.sketch_dim)?;
    let b = count_sketch(x, &plan.h2, &plan.s2, plan.sketch_dim)?;
    match path {
        ConvPath::Direct => fft::circular_convolve_direct(&a, &b),
        ConvPath::Auto => fft::circular_convolve(&a, &b),
    }
}

pub fn tensor_sketch<T: Scalar>(x: &[T], plan: &SketchPlan) -> Result<Vec<T>> {
    tensor_sketch_with(x, plan, ConvPath::Auto)
}

/// `C(X) = sum_s TS(x_s)`.
pub fn compact_bilinear_with<T: Scalar>(
    set: &DescriptorSet<T>,
    plan: &SketchPlan,
    path: ConvPath,
) -> Result<Vec<T>> {
    set.nonempty()?;
    let mut acc = vec![T::zero(); plan.sketch_dim];
    for x in set.iter() {
        let ts = tensor_sketch_with(x, plan, path)?;
        acc.iter_mut().zip(ts).for_each(|(a, t)| *a = *a + t);
    }
    Ok(acc)
}

pub fn compact_bilinear<T: Scalar>(set: &DescriptorSet<T>, plan: &SketchPlan) -> Result<Vec<T>> {
    compact_bilinear_with(set, plan, ConvPath::Auto)
}

/// Full bilinear descriptor `B(X) = sum_s x_s x_s^T`, row-major `c x c`.
/// Reference only; the model never materialises it.
pub fn exact_bilinear<T: Scalar>(set: &DescriptorSet<T>) -> Result<Vec<T>> {
    set.nonempty()?;
    let c = set.dim;
    let mut b = vec![T::zero(); c * c];
    for x in set.iter() {
        for i in 0..c {
            for j in 0..c {
                b[i * c + j] = b[i * c + j] + x[i] * x[j];
            }
        }
    }
    Ok(b)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Row-wise tensor sketch of a `[rows, c]` tape value.
pub fn tape_tensor_sketch<T: Scalar>(tape: &mut Tape<T>, x: Var, plan: &SketchPlan) -> Result<Var> {
    let (h1, s1) = plan.first();
    let (h2, s2) = plan.second();
    let a = tape.count_sketch(x, h1, s1, plan.sketch_dim)?;
    let b = tape.count_sketch(x, h2, s2, plan.sketch_dim)?;
    tape.circular_convolve(a, b)
}

/// Compact bilinear pooling over descriptor tensors of equal shape
/// `[rows, c]`; row `r` of the result pools row `r` of every descriptor.
pub fn tape_compact_bilinear<T: Scalar>(
    tape: &mut Tape<T>,
    descriptors: &[Var],
    plan: &SketchPlan,
) -> Result<Var> {
    let Some((&first, rest)) = descriptors.split_first() else {
        return Err(Error::Validation("descriptor set is empty".into()));
    };
    let mut acc = tape_tensor_sketch(tape, first, plan)?;
    for &x in rest {
        let ts = tape_tensor_sketch(tape, x, plan)?;
        acc = tape.add(acc, ts)?;
    }
    Ok(acc)
}

/// One row of the sketch-quality study.
#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub sketch_dim: usize,
    pub mean_rel_err: f64,
    pub p95_rel_err: f64,
    /// Seconds spent pooling with the direct convolution.
    pub wall_time_direct: f64,
    /// Seconds spent pooling with the FFT convolution.
    pub wall_time_fft: f64,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub input_dim: usize,
    pub sketch_dims: Vec<usize>,
    pub pairs: usize,
    pub plans: usize,
    pub set_size: usize,
    pub seed: u64,
    /// Also time the direct convolution path.
    pub time_direct: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            input_dim: 64,
            sketch_dims: vec![256, 512, 1024, 2048],
            pairs: 100,
            plans: 10,
            set_size: 4,
            seed: 0,
            time_direct: true,
        }
    }
}

/// Random nonnegative descriptor set, uniform in `[0, 1)`.
pub fn random_set(rng: &mut impl Rng, size: usize, dim: usize) -> DescriptorSet<f64> {
    DescriptorSet::new(
        (0..size)
            .map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect())
            .collect(),
    )
    .expect("uniform dims")
}

/// Relative error of `<C(X), C(Y)>` against `<B(X), B(Y)>` over random set
/// pairs and plans, for each sketch dimension.
pub fn approximation_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs: Vec<_> = (0..cfg.pairs)
        .map(|_| {
            let x = random_set(&mut rng, cfg.set_size, cfg.input_dim);
            let y = random_set(&mut rng, cfg.set_size, cfg.input_dim);
            let exact = dot(&exact_bilinear(&x)?, &exact_bilinear(&y)?);
            Ok((x, y, exact))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (di, &d) in cfg.sketch_dims.iter().enumerate() {
        let mut errs = Vec::with_capacity(cfg.pairs * cfg.plans);
        let mut fft_time = 0.0;
        let mut direct_time = 0.0;
        for p in 0..cfg.plans {
            let plan_seed = cfg.seed ^ ((di as u64) << 32 | p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let plan = SketchPlan::new(cfg.input_dim, d, plan_seed)?;
            for (x, y, exact) in &pairs {
                let t = Instant::now();
                let cx = compact_bilinear(x, &plan)?;
                let cy = compact_bilinear(y, &plan)?;
                fft_time += t.elapsed().as_secs_f64();
                if cfg.time_direct {
                    let t = Instant::now();
                    let _ = compact_bilinear_with(x, &plan, ConvPath::Direct)?;
                    let _ = compact_bilinear_with(y, &plan, ConvPath::Direct)?;
                    direct_time += t.elapsed().as_secs_f64();
                }
                errs.push((dot(&cx, &cy) - exact).abs() / exact.abs());
            }
        }
        errs.sort_by(f64::total_cmp);
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let p95 = errs[((errs.len() as f64 * 0.95).ceil() as usize).saturating_sub(1)];
        rows.push(StudyRow {
            sketch_dim: d,
            mean_rel_err: mean,
            p95_rel_err: p95,
            wall_time_direct: direct_time,
            wall_time_fft: fft_time,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest};

    #[test]
    fn count_sketch_definition() {
        let out = count_sketch(&[1.0, 2.0], &[0, 1], &[1, -1], 2).unwrap();
        assert_eq!(out, vec![1.0, -2.0]);
        let out = count_sketch(&[0.0f64; 4], &[0, 1, 1, 0], &[1, 1, -1, -1], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        assert!(count_sketch(&[1.0], &[0, 1], &[1, 1], 2).is_err());
    }

    #[test]
    fn plan_is_reproducible() {
        let a = SketchPlan::new(16, 64, 42).unwrap();
        let b = SketchPlan::new(16, 64, 42).unwrap();
        let c = SketchPlan::new(16, 64, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.h1.iter().chain(&a.h2).all(|&h| h < 64));
        assert!(a.s1.iter().chain(&a.s2).all(|&s| s == 1 || s == -1));
    }

    #[test]
    fn count_sketch_second_moment_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm2 = dot(&x, &x);
        let mean = (0..1000)
            .map(|seed| {
                let plan = SketchPlan::new(32, 16, seed).unwrap();
                let (h, s) = plan.first();
                let cs = count_sketch(&x, h, s, 16).unwrap();
                dot(&cs, &cs)
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mean - norm2).abs() / norm2 < 0.05, "{mean} vs {norm2}");
    }

    #[test]
    fn tensor_sketch_is_unbiased_for_squared_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..16).map(|_| rng.gen()).collect();
        let target = dot(&x, &y).powi(2);
        let mean = (0..400)
            .map(|seed| {
                let plan = SketchPlan::new(16, 256, 1000 + seed).unwrap();
                dot(&tensor_sketch(&x, &plan).unwrap(), &tensor_sketch(&y, &plan).unwrap())
            })
            .sum::<f64>()
            / 400.0;
        assert!((mean - target).abs() / target < 0.05, "{mean} vs {target}");
    }

    #[test]
    fn zero_and_linearity() {
        let plan = SketchPlan::new(4, 8, 0).unwrap();
        assert!(tensor_sketch(&[0.0f64; 4], &plan).unwrap().iter().all(|&v| v == 0.0));

        let x = vec![0.5, -1.0, 2.0, 0.25];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let single = DescriptorSet::new(vec![x.clone()]).unwrap();
        assert_eq!(compact_bilinear(&single, &plan).unwrap(), tensor_sketch(&x, &plan).unwrap());

        // Tensor sketches are even in x, so {x, -x} pools to 2 TS(x); the
        // linearity property holds for the descriptors' sketches themselves.
        let both = DescriptorSet::new(vec![x.clone(), neg.clone()]).unwrap();
        let c = compact_bilinear(&both, &plan).unwrap();
        let ts = tensor_sketch(&x, &plan).unwrap();
        for (a, b) in c.iter().zip(&ts) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
        assert!(compact_bilinear(&DescriptorSet::<f64>::new(vec![]).unwrap(), &plan).is_err());
    }

    #[test]
    fn exact_bilinear_outer_product() {
        let set = DescriptorSet::new(vec![vec![1.0, 2.0]]).unwrap();
        assert_eq!(exact_bilinear(&set).unwrap(), vec![1.0, 2.0, 2.0, 4.0]);
        assert!(exact_bilinear(&DescriptorSet::<f64>::new(vec![]).unwrap()).is_err());
    }

    #[test]
    fn exact_bilinear_matches_kernel_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = DescriptorSet::new((0..5).map(|_| (0..7).map(|_| rng.gen_range(-1.0f64..1.0)).collect()).collect()).unwrap();
            let y = DescriptorSet::new((0..3).map(|_| (0..7).map(|_| rng.gen_range(-1.0f64..1.0)).collect()).collect()).unwrap();
            let lhs = dot(&exact_bilinear(&x).unwrap(), &exact_bilinear(&y).unwrap());
            let mut rhs = 0.0f64;
            for xs in x.iter() {
                for yu in y.iter() {
                    rhs += dot(xs, yu).powi(2);
                }
            }
            assert!((lhs - rhs).abs() / rhs.abs() < 1e-10);
        }
    }

    #[test]
    fn exact_bilinear_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let set = DescriptorSet::new((0..3).map(|_| (0..5).map(|_| rng.gen_range(-1.0f64..1.0)).collect()).collect()).unwrap();
        let b = exact_bilinear(&set).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(b[i * 5 + j], b[j * 5 + i]);
            }
        }
        for _ in 0..50 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bv: Vec<f64> = (0..5).map(|i| dot(&b[i * 5..(i + 1) * 5], &v)).collect();
            assert!(dot(&v, &bv) >= -1e-12);
        }
    }

    #[test]
    fn study_error_shrinks_with_dimension() {
        let rows = approximation_study(&StudyConfig {
            input_dim: 32,
            sketch_dims: vec![128, 512],
            pairs: 30,
            plans: 5,
            time_direct: false,
            ..StudyConfig::default()
        })
        .unwrap();
        assert!(rows[1].mean_rel_err < rows[0].mean_rel_err);
        assert!(rows.iter().all(|r| r.p95_rel_err >= r.mean_rel_err * 0.5));
    }

    proptest! {
        #[test]
        fn sketches_are_homogeneous(seed in any::<u64>(), alpha in -3.0f64..3.0) {
            let plan = SketchPlan::new(12, 32, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ax: Vec<f64> = x.iter().map(|v| alpha * v).collect();
            let (h, s) = plan.first();
            let cs = count_sketch(&x, h, s, 32).unwrap();
            let acs = count_sketch(&ax, h, s, 32).unwrap();
            for (a, b) in cs.iter().zip(&acs) {
                prop_assert!((alpha * a - b).abs() < 1e-12);
            }
            let ts = tensor_sketch(&x, &plan).unwrap();
            let ats = tensor_sketch(&ax, &plan).unwrap();
            for (a, b) in ts.iter().zip(&ats) {
                prop_assert!((alpha * alpha * a - b).abs() < 1e-10);
            }
        }
    }
}
