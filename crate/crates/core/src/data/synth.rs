//! Synthetic cohorts with class-dependent tumors.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, ManifestRow};
use super::rvol::write_rvol;
use crate::error::{Error, Result};
use crate::preprocess::{Modality, OSClass, SubjectRecord, Volume3D, VolumeKind};

/// Tumor geometry and contrast of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassBlob {
    /// Radius as a fraction of the smallest volume dimension.
    pub radius: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalMode {
    /// Tumor size, contrast and age all depend on the class.
    Global,
    /// Same tumor size and age distribution for every class; the class only
    /// shows in which modalities the tumor is visible, and no single
    /// modality separates all three classes.
    ModalitySpecific,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_subjects: usize,
    /// Short, Mid, Long proportions.
    pub class_mix: [f64; 3],
    pub dims: [usize; 3],
    pub blobs: [ClassBlob; 3],
    pub noise_sigma: f64,
    /// Maximum tumor centre offset as a fraction of each dimension.
    pub jitter: f64,
    pub signal: SignalMode,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 120,
            class_mix: [1.0 / 3.0; 3],
            dims: [32, 32, 32],
            blobs: [
                ClassBlob { radius: 0.22, contrast: 1.0 },
                ClassBlob { radius: 0.16, contrast: 0.7 },
                ClassBlob { radius: 0.10, contrast: 0.4 },
            ],
            noise_sigma: 0.1,
            jitter: 0.1,
            signal: SignalMode::Global,
            seed: 0,
        }
    }
}

/// Per-modality tissue level.
const TISSUE: [f32; 4] = [1.0, 0.9, 1.2, 1.1];

/// Tumor contrast per modality for labels 1, 2 and 4.
const REGION_WEIGHT: [[f32; 3]; 4] = [
    [-0.6, -0.3, 0.2],
    [-0.4, 0.1, 1.0],
    [0.8, 0.9, 0.5],
    [0.5, 1.0, 0.6],
];

/// Tumor visibility per class (rows) and modality (columns) in
/// [`SignalMode::ModalitySpecific`].
const VISIBLE: [[f32; 4]; 3] = [[1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 1.0]];

const AGE_MEAN: [f64; 3] = [62.0, 56.0, 50.0];

/// Inclusive survival-day ranges that bin back to each class.
pub const SURVIVAL_DAYS: [(u32, u32); 3] = [(30, 304), (305, 456), (457, 1800)];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 3 {
            return Err(Error::Config(format!("n_subjects must be at least 3, got {}", self.n_subjects)));
        }
        let sum: f64 = self.class_mix.iter().sum();
        if self.class_mix.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("class_mix {:?} must be non-negative and sum to 1", self.class_mix)));
        }
        if self.dims.iter().any(|&d| d < 4) {
            return Err(Error::Config(format!("dims {:?} must all be at least 4", self.dims)));
        }
        for b in &self.blobs {
            if !(b.radius > 0.0 && b.radius < 0.5) || !b.contrast.is_finite() {
                return Err(Error::Config(format!("invalid blob {b:?}: radius must be in (0, 0.5)")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("noise_sigma must be >= 0 and jitter in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Class counts by largest remainder; ties go to the lower class.
    pub fn class_counts(&self) -> [usize; 3] {
        let n = self.n_subjects as f64;
        let exact = self.class_mix.map(|p| p * n);
        let mut counts = exact.map(|e| e.floor() as usize);
        let mut left = self.n_subjects - counts.iter().sum::<usize>();
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
        for &c in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[c] += 1;
            left -= 1;
        }
        counts
    }

    /// Generator class of every subject, in subject order.
    pub fn classes(&self) -> Vec<OSClass> {
        let mut classes = Vec::with_capacity(self.n_subjects);
        for (c, &n) in self.class_counts().iter().enumerate() {
            classes.extend(std::iter::repeat(OSClass::from_index(c).unwrap()).take(n));
        }
        classes.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        classes
    }
}

pub fn subject_id(i: usize) -> String {
    format!("subj_{i:04}")
}

fn generate_subject(spec: &SynthSpec, i: usize, class: OSClass) -> Result<SubjectRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(i as u64 + 1);
    let c = class.index();
    let dims = spec.dims;
    let min_dim = *dims.iter().min().unwrap() as f64;
    let blob = match spec.signal {
        SignalMode::Global => spec.blobs[c],
        SignalMode::ModalitySpecific => ClassBlob { radius: spec.blobs[1].radius, contrast: 1.0 },
    };
    let radius = blob.radius * min_dim;
    let centre = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let axes = dims.map(|d| 0.42 * d as f64);
    let tumor = std::array::from_fn::<f64, 3, _>(|a| {
        let j = spec.jitter * dims[a] as f64;
        centre[a] + if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 }
    });
    let age_mean = match spec.signal {
        SignalMode::Global => AGE_MEAN[c],
        SignalMode::ModalitySpecific => AGE_MEAN[1],
    };
    let age = (Normal::new(age_mean, 6.0).unwrap().sample(&mut rng).clamp(18.0, 90.0) * 10.0).round() / 10.0;
    let (lo, hi) = SURVIVAL_DAYS[c];
    let survival_days = rng.gen_range(lo..=hi) as f64;

    let n = dims.iter().product::<usize>();
    let mut labels = vec![0u8; n];
    let mut inside = vec![false; n];
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let p = [z, y, x].map(|v| v as f64);
                let idx = (z * dims[1] + y) * dims[2] + x;
                let e: f64 = (0..3).map(|a| ((p[a] - centre[a]) / axes[a]).powi(2)).sum();
                let d = (0..3).map(|a| (p[a] - tumor[a]).powi(2)).sum::<f64>().sqrt() / radius;
                labels[idx] = match d {
                    d if d <= 0.35 => 1,
                    d if d <= 0.65 => 4,
                    d if d <= 1.0 => 2,
                    _ => 0,
                };
                inside[idx] = e <= 1.0 || labels[idx] != 0;
            }
        }
    }
    if labels.iter().all(|&l| l == 0) {
        // radius below one voxel: mark the centre voxel
        let t = tumor.map(|v| v.round() as usize);
        let idx = (t[0] * dims[1] + t[1]) * dims[2] + t[2];
        labels[idx] = 1;
        inside[idx] = true;
    }
    let gains: [f32; 4] = match spec.signal {
        SignalMode::Global => [blob.contrast as f32; 4],
        SignalMode::ModalitySpecific => VISIBLE[c],
    };
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0)).unwrap();
    let volumes = Modality::ALL.map(|m| {
        let v = m.index();
        let gain = gains[v];
        let voxels: Vec<f32> = (0..n)
            .map(|idx| {
                if !inside[idx] {
                    return 0.0;
                }
                let region = match labels[idx] {
                    1 => gain * REGION_WEIGHT[v][0],
                    2 => gain * REGION_WEIGHT[v][1],
                    4 => gain * REGION_WEIGHT[v][2],
                    _ => 0.0,
                };
                let eps = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
                TISSUE[v] + region + eps
            })
            .collect();
        Volume3D::new(dims, voxels, VolumeKind::Intensity)
    });
    let [a, b, cc, d] = volumes;
    let mask = Volume3D::new(dims, labels.iter().map(|&l| l as f32).collect(), VolumeKind::Mask)?;
    Ok(SubjectRecord {
        id: subject_id(i),
        age,
        survival_days,
        volumes: [a?, b?, cc?, d?],
        mask,
    })
}

/// Generates the cohort in memory.
pub fn generate_records(spec: &SynthSpec) -> Result<Vec<SubjectRecord>> {
    spec.validate()?;
    let classes = spec.classes();
    classes
        .par_iter()
        .enumerate()
        .map(|(i, &c)| generate_subject(spec, i, c))
        .collect()
}

/// Writes the cohort as RVOL files plus `manifest.csv` under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf> {
    let records = generate_records(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<ManifestRow> = records
        .par_iter()
        .map(|r| {
            let name = |s: &str| format!("{}_{s}.rvol", r.id);
            for m in Modality::ALL {
                write_rvol(&out_dir.join(name(m.name())), r.volume(m))?;
            }
            write_rvol(&out_dir.join(name("seg")), &r.mask)?;
            Ok(ManifestRow {
                subject_id: r.id.clone(),
                age: r.age,
                survival_days: r.survival_days,
                t1: name("t1"),
                t1ce: name("t1ce"),
                t2: name("t2"),
                flair: name("flair"),
                seg: name("seg"),
            })
        })
        .collect::<Result<_>>()?;
    let path = out_dir.join("manifest.csv");
    write_manifest(&path, &rows)?;
    Ok(path)
}
