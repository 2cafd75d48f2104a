//! Subject volumes to model inputs: tumor-centred patch, axis-mean
//! projections, supplemental lesion/age features and the survival class.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Mask labels: necrotic/non-enhancing core, edema, enhancing tumor.
pub const TUMOR_LABELS: [u8; 3] = [1, 2, 4];

/// Average month length in days (365.25 / 12).
pub const DAYS_PER_MONTH: f64 = 30.4375;
pub const SHORT_MAX_MONTHS: f64 = 10.0;
pub const LONG_MIN_MONTHS: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    T1ce,
    T2,
    Flair,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::T1, Modality::T1ce, Modality::T2, Modality::Flair];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::T1 => "t1",
            Modality::T1ce => "t1ce",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VolumeKind {
    Intensity,
    Mask,
}

/// Dense `D x H x W` scalar grid, row-major with W fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    voxels: Vec<f32>,
    kind: VolumeKind,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], voxels: Vec<f32>, kind: VolumeKind) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(dim_err!("volume dims {dims:?} must be positive"));
        }
        let n = dims.iter().product::<usize>();
        if voxels.len() != n {
            return Err(dim_err!(
                "volume dims {dims:?} need {n} voxels, got {}",
                voxels.len()
            ));
        }
        match kind {
            VolumeKind::Intensity => {
                if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("non-finite intensity at voxel {i}")));
                }
            }
            VolumeKind::Mask => {
                if let Some(v) = voxels.iter().find(|&&v| !is_mask_label(v)) {
                    return Err(Error::Validation(format!(
                        "mask value {v} is not one of 0, 1, 2, 4"
                    )));
                }
            }
        }
        Ok(Volume3D { dims, voxels, kind })
    }

    pub fn from_fn(dims: [usize; 3], kind: VolumeKind, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut voxels = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    voxels.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, voxels, kind)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[f32] {
        &self.voxels
    }

    pub fn kind(&self) -> VolumeKind {
        self.kind
    }

    pub fn into_voxels(self) -> Vec<f32> {
        self.voxels
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.voxels[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    fn get_or_zero(&self, z: isize, y: isize, x: isize) -> f32 {
        let [d, h, w] = self.dims;
        if z < 0 || y < 0 || x < 0 || z >= d as isize || y >= h as isize || x >= w as isize {
            0.0
        } else {
            self.at(z as usize, y as usize, x as usize)
        }
    }
}

fn is_mask_label(v: f32) -> bool {
    v == 0.0 || TUMOR_LABELS.iter().any(|&l| v == l as f32)
}

/// Overall-survival class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OSClass {
    Short,
    Mid,
    Long,
}

impl OSClass {
    pub const ALL: [OSClass; 3] = [OSClass::Short, OSClass::Mid, OSClass::Long];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            OSClass::Short => "short",
            OSClass::Mid => "mid",
            OSClass::Long => "long",
        }
    }
}

impl fmt::Display for OSClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bins survival time: `<= 10` months is short, `>= 15` months is long.
pub fn os_class(survival_days: f64, days_per_month: f64) -> Result<OSClass> {
    if !(survival_days.is_finite() && survival_days > 0.0) {
        return Err(Error::Validation(format!(
            "survival days must be positive, got {survival_days}"
        )));
    }
    if survival_days <= SHORT_MAX_MONTHS * days_per_month {
        Ok(OSClass::Short)
    } else if survival_days >= LONG_MIN_MONTHS * days_per_month {
        Ok(OSClass::Long)
    } else {
        Ok(OSClass::Mid)
    }
}

/// One subject: four co-registered modalities, tumor mask, age and outcome.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub id: String,
    pub age: f64,
    pub survival_days: f64,
    /// Indexed by [`Modality::index`].
    pub volumes: [Volume3D; 4],
    pub mask: Volume3D,
}

impl SubjectRecord {
    pub fn validate(&self) -> Result<()> {
        let dims = self.mask.dims();
        if self.mask.kind() != VolumeKind::Mask {
            return Err(Error::Validation(format!("{}: segmentation is not a mask volume", self.id)));
        }
        for m in Modality::ALL {
            if self.volumes[m.index()].dims() != dims {
                return Err(dim_err!(
                    "{}: {m} dims {:?} differ from mask dims {dims:?}",
                    self.id,
                    self.volumes[m.index()].dims()
                ));
            }
        }
        if !(self.survival_days.is_finite() && self.survival_days > 0.0) {
            return Err(Error::Validation(format!(
                "{}: survival days must be positive, got {}",
                self.id, self.survival_days
            )));
        }
        Ok(())
    }

    pub fn volume(&self, m: Modality) -> &Volume3D {
        &self.volumes[m.index()]
    }
}

/// `s = [s_total, s1, s2, s3, s_age]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupplementalFeatures {
    pub s_total: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s_age: f64,
}

impl SupplementalFeatures {
    pub const LEN: usize = 5;

    /// From label counts `n1, n2, n3` (labels 1, 2, 4) and the support size.
    pub fn from_counts(counts: [usize; 3], n_nonzero: usize, age: f64, age_scale: f64) -> Result<Self> {
        let tumor: usize = counts.iter().sum();
        if tumor == 0 {
            return Err(Error::Validation("mask contains no tumor voxels".into()));
        }
        if n_nonzero < tumor {
            return Err(Error::Validation(format!(
                "support of {n_nonzero} voxels is smaller than the {tumor} tumor voxels"
            )));
        }
        let t = tumor as f64;
        Ok(SupplementalFeatures {
            s_total: t / n_nonzero as f64,
            s1: counts[0] as f64 / t,
            s2: counts[1] as f64 / t,
            s3: counts[2] as f64 / t,
            s_age: age * age_scale,
        })
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.s_total, self.s1, self.s2, self.s3, self.s_age]
    }
}

/// Counts of mask labels 1, 2 and 4.
pub fn label_counts(mask: &Volume3D) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for &v in mask.voxels() {
        if let Some(i) = TUMOR_LABELS.iter().position(|&l| v == l as f32) {
            counts[i] += 1;
        }
    }
    counts
}

/// Supplemental features. The support `n_nonzero` is the set of voxels
/// nonzero in `brain` or in the tumor mask.
pub fn supplemental_features(
    mask: &Volume3D,
    brain: &Volume3D,
    age: f64,
    age_scale: f64,
) -> Result<SupplementalFeatures> {
    if mask.kind() != VolumeKind::Mask {
        return Err(Error::Validation("supplemental features need a mask volume".into()));
    }
    if mask.dims() != brain.dims() {
        return Err(dim_err!(
            "mask dims {:?} differ from support volume {:?}",
            mask.dims(),
            brain.dims()
        ));
    }
    let n_nonzero = mask
        .voxels()
        .iter()
        .zip(brain.voxels())
        .filter(|(&m, &b)| m != 0.0 || b != 0.0)
        .count();
    SupplementalFeatures::from_counts(label_counts(mask), n_nonzero, age, age_scale)
}

/// Centroid of the nonzero mask voxels, rounded to the nearest voxel.
pub fn mask_centroid(mask: &Volume3D) -> Option<[isize; 3]> {
    let [_, h, w] = mask.dims();
    let mut sum = [0f64; 3];
    let mut n = 0usize;
    for (i, &v) in mask.voxels().iter().enumerate() {
        if v != 0.0 {
            sum[0] += (i / (h * w)) as f64;
            sum[1] += ((i / w) % h) as f64;
            sum[2] += (i % w) as f64;
            n += 1;
        }
    }
    (n > 0).then(|| sum.map(|s| (s / n as f64).round() as isize))
}

/// Crops a `crop^3` window centred on the tumor (zero-filled beyond the
/// volume) and resizes it trilinearly to `size^3`.
pub fn extract_patch(
    volume: &Volume3D,
    mask: &Volume3D,
    crop: usize,
    size: usize,
    subject: &str,
) -> Result<Volume3D> {
    if volume.dims() != mask.dims() {
        return Err(dim_err!(
            "{subject}: volume dims {:?} differ from mask {:?}",
            volume.dims(),
            mask.dims()
        ));
    }
    if crop == 0 || size == 0 {
        return Err(Error::Config("patch crop and size must be positive".into()));
    }
    let centre = mask_centroid(mask).ok_or_else(|| Error::Preprocess {
        subject: subject.to_string(),
        reason: "tumor mask is empty".into(),
    })?;
    let half = (crop / 2) as isize;
    let start = centre.map(|c| c - half);
    let window = Volume3D::from_fn([crop; 3], VolumeKind::Intensity, |z, y, x| {
        volume.get_or_zero(
            start[0] + z as isize,
            start[1] + y as isize,
            start[2] + x as isize,
        )
    })?;
    resize_trilinear(&window, [size; 3])
}

/// Source sample positions for one axis (half-pixel centres, edge-clamped).
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Trilinear resampling with half-pixel alignment.
pub fn resize_trilinear(v: &Volume3D, out_dims: [usize; 3]) -> Result<Volume3D> {
    if out_dims.iter().any(|&d| d == 0) {
        return Err(dim_err!("resize target {out_dims:?} must be positive"));
    }
    let dims = v.dims();
    let tz = axis_taps(dims[0], out_dims[0]);
    let ty = axis_taps(dims[1], out_dims[1]);
    let tx = axis_taps(dims[2], out_dims[2]);
    Volume3D::from_fn(out_dims, v.kind(), |z, y, x| {
        let (z0, z1, fz) = tz[z];
        let (y0, y1, fy) = ty[y];
        let (x0, x1, fx) = tx[x];
        let mut acc = 0.0f64;
        for (zi, wz) in [(z0, 1.0 - fz), (z1, fz)] {
            for (yi, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xi, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    acc += wz * wy * wx * v.at(zi, yi, xi) as f64;
                }
            }
        }
        acc as f32
    })
    .map(|mut out| {
        // Resampled masks are no longer label-valued.
        out.kind = VolumeKind::Intensity;
        out
    })
}

/// Three-channel square image, channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image2D {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image2D {
    pub const CHANNELS: usize = 3;

    pub fn new(size: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * size * size {
            return Err(dim_err!(
                "image of side {size} needs {} values, got {}",
                Self::CHANNELS * size * size,
                data.len()
            ));
        }
        Ok(Image2D { size, data })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.size * self.size;
        &self.data[c * plane..(c + 1) * plane]
    }
}

/// Axis means of a cubic volume before normalisation. Channel `c` averages
/// over axis `c`: `[H x W, D x W, D x H]`.
pub fn project_axes_raw(v: &Volume3D) -> Result<Vec<f64>> {
    let [d, h, w] = v.dims();
    if d != h || h != w {
        return Err(dim_err!("axis projection needs a cubic volume, got {:?}", v.dims()));
    }
    let p = d;
    let plane = p * p;
    let mut out = vec![0f64; 3 * plane];
    for z in 0..p {
        for y in 0..p {
            for x in 0..p {
                let val = v.at(z, y, x) as f64;
                out[y * p + x] += val;
                out[plane + z * p + x] += val;
                out[2 * plane + z * p + y] += val;
            }
        }
    }
    let inv = 1.0 / p as f64;
    out.iter_mut().for_each(|s| *s *= inv);
    Ok(out)
}

/// Minimum variance used when standardising a projected channel.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Projects along each axis, then standardises every channel to zero mean
/// and unit variance.
pub fn project_axes(v: &Volume3D) -> Result<Image2D> {
    let raw = project_axes_raw(v)?;
    let size = v.dims()[0];
    let plane = size * size;
    let mut data = Vec::with_capacity(raw.len());
    for chan in raw.chunks_exact(plane) {
        let mean = chan.iter().sum::<f64>() / plane as f64;
        let var = chan.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / plane as f64;
        let sd = var.max(VARIANCE_FLOOR).sqrt();
        data.extend(chan.iter().map(|x| ((x - mean) / sd) as f32));
    }
    Image2D::new(size, data)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Side of the cubic crop window around the tumor centroid.
    pub crop: usize,
    /// Side of the resized patch and of the projected images.
    pub size: usize,
    pub days_per_month: f64,
    /// Volume whose nonzero voxels define the brain support.
    pub support_modality: Modality,
    pub age_scale: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            crop: 124,
            size: 124,
            days_per_month: DAYS_PER_MONTH,
            support_modality: Modality::T1,
            age_scale: 0.01,
        }
    }
}

/// Model-ready subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub label: OSClass,
    /// Indexed by [`Modality::index`].
    pub images: [Image2D; 4],
    pub features: SupplementalFeatures,
}

pub fn preprocess_subject(rec: &SubjectRecord, cfg: &PreprocessConfig) -> Result<Sample> {
    rec.validate()?;
    let label = os_class(rec.survival_days, cfg.days_per_month)?;
    let features = supplemental_features(&rec.mask, rec.volume(cfg.support_modality), rec.age, cfg.age_scale)
        .map_err(|e| Error::Preprocess {
            subject: rec.id.clone(),
            reason: e.to_string(),
        })?;
    let image = |m: Modality| -> Result<Image2D> {
        let patch = extract_patch(rec.volume(m), &rec.mask, cfg.crop, cfg.size, &rec.id)?;
        project_axes(&patch)
    };
    Ok(Sample {
        id: rec.id.clone(),
        label,
        images: [
            image(Modality::T1)?,
            image(Modality::T1ce)?,
            image(Modality::T2)?,
            image(Modality::Flair)?,
        ],
        features,
    })
}

/// Preprocesses subjects in parallel, preserving input order.
pub fn preprocess_all(records: &[SubjectRecord], cfg: &PreprocessConfig) -> Result<Vec<Sample>> {
    records.par_iter().map(|r| preprocess_subject(r, cfg)).collect()
}
