//! The multi-modal network: one residual CNN branch per modality, a shared
//! branch fusing the four branch features by compact bilinear pooling, and a
//! fusion head over the cascaded logits of every head plus the supplemental
//! features.
//!
//! Parameters live outside the graph in [`ModelParams`]; every forward pass
//! registers them on a fresh [`Tape`].

mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{Modality, OSClass, Sample, SupplementalFeatures};
use crate::sketch::{tape_compact_bilinear, SketchPlan};
use crate::tensor::{softmax, Scalar, Tape, Tensor, Var};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const NUM_MODALITIES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub channels_per_stage: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub feature_dim: usize,
    pub final_pool: usize,
}

impl BranchConfig {
    /// Three residual stages of widths 16/32/64, two blocks each, 64 features.
    pub fn toy() -> Self {
        BranchConfig {
            channels_per_stage: vec![16, 32, 64],
            blocks_per_stage: vec![2, 2, 2],
            feature_dim: 64,
            final_pool: 4,
        }
    }

    /// ResNet34-like stage layout with a 512-node feature layer.
    pub fn paper_scale() -> Self {
        BranchConfig {
            channels_per_stage: vec![64, 128, 256, 512],
            blocks_per_stage: vec![3, 4, 6, 3],
            feature_dim: 512,
            final_pool: 4,
        }
    }

    fn validate(&self, num_classes: usize) -> Result<()> {
        if self.channels_per_stage.is_empty() {
            return Err(Error::Config("branch needs at least one stage".into()));
        }
        if self.channels_per_stage.len() != self.blocks_per_stage.len() {
            return Err(Error::Config(format!(
                "{} stage widths but {} block counts",
                self.channels_per_stage.len(),
                self.blocks_per_stage.len()
            )));
        }
        if self.channels_per_stage.iter().chain(&self.blocks_per_stage).any(|&v| v == 0) {
            return Err(Error::Config("stage widths and block counts must be positive".into()));
        }
        if self.feature_dim <= num_classes {
            return Err(Error::Config(format!(
                "feature_dim {} must exceed the {num_classes} classes",
                self.feature_dim
            )));
        }
        if self.final_pool == 0 {
            return Err(Error::Config("final_pool must be positive".into()));
        }
        Ok(())
    }
}

/// Which heads feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Four modality heads and the shared head.
    #[default]
    Full,
    /// Modality heads only; no shared branch.
    BranchOnly,
    /// Shared head only; branches contribute features but no logits.
    SharedOnly,
}

impl FusionMode {
    fn uses_branch_heads(self) -> bool {
        self != FusionMode::SharedOnly
    }

    fn uses_shared(self) -> bool {
        self != FusionMode::BranchOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub branch: BranchConfig,
    pub num_classes: usize,
    pub image_size: usize,
    pub sketch_dim: usize,
    pub sketch_seed: u64,
    /// Signed square root then l2 normalisation of the pooled sketch.
    pub signed_sqrt_l2: bool,
    pub fusion: FusionMode,
}

impl ModelConfig {
    pub fn toy(image_size: usize) -> Self {
        ModelConfig {
            branch: BranchConfig::toy(),
            num_classes: OSClass::COUNT,
            image_size,
            sketch_dim: 512,
            sketch_seed: 0,
            signed_sqrt_l2: false,
            fusion: FusionMode::Full,
        }
    }
}

/// Spatial side after a 3x3, pad-1 convolution with the given stride.
fn conv3_out(side: usize, stride: usize) -> usize {
    (side + 2 - 3) / stride + 1
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Block {
    conv1: Conv,
    conv2: Conv,
    proj: Option<Conv>,
}

#[derive(Debug, Clone)]
struct Branch {
    stem: Conv,
    blocks: Vec<Block>,
    flat_dim: usize,
    feat: Dense,
    head: Option<Dense>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    HeNormal { fan_in: usize },
    Uniform { fan_in: usize },
    Zero,
}

/// Name, shape and initialiser of one parameter tensor.
#[derive(Debug, Clone)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Conv {
        let fan_in = c_in * k * k;
        Conv {
            w: self.add(format!("{prefix}.w"), vec![c_out, c_in, k, k], Init::HeNormal { fan_in }),
            b: self.add(format!("{prefix}.b"), vec![c_out], Init::Zero),
            stride,
            pad: k / 2,
        }
    }

    fn dense(&mut self, prefix: &str, n_in: usize, n_out: usize) -> Dense {
        Dense {
            w: self.add(format!("{prefix}.w"), vec![n_in, n_out], Init::Uniform { fan_in: n_in }),
            b: self.add(format!("{prefix}.b"), vec![n_out], Init::Zero),
        }
    }
}

/// Model structure plus the frozen sketch plan.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    plan: SketchPlan,
    branches: Vec<Branch>,
    shared: Option<Dense>,
    fusion: Dense,
    fusion_in: usize,
    specs: Vec<ParamSpec>,
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let k = cfg.num_classes;
        if k != OSClass::COUNT {
            return Err(Error::Config(format!(
                "num_classes must be {}, got {k}",
                OSClass::COUNT
            )));
        }
        cfg.branch.validate(k)?;
        if cfg.sketch_dim == 0 || cfg.image_size == 0 {
            return Err(Error::Config("sketch_dim and image_size must be positive".into()));
        }
        let bc = &cfg.branch;
        let mut lb = LayoutBuilder { specs: Vec::new() };
        let mut branches = Vec::with_capacity(NUM_MODALITIES);
        for m in Modality::ALL {
            let p = m.name();
            let mut width = bc.channels_per_stage[0];
            let stem = lb.conv(&format!("{p}.stem"), 3, width, 3, 1);
            let mut side = conv3_out(cfg.image_size, 1);
            let mut blocks = Vec::new();
            for (s, (&out_w, &n_blocks)) in bc.channels_per_stage.iter().zip(&bc.blocks_per_stage).enumerate() {
                for b in 0..n_blocks {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let name = format!("{p}.s{s}.b{b}");
                    let conv1 = lb.conv(&format!("{name}.conv1"), width, out_w, 3, stride);
                    let conv2 = lb.conv(&format!("{name}.conv2"), out_w, out_w, 3, 1);
                    let proj = (stride != 1 || width != out_w)
                        .then(|| lb.conv(&format!("{name}.proj"), width, out_w, 1, stride));
                    blocks.push(Block { conv1, conv2, proj });
                    side = conv3_out(side, stride);
                    width = out_w;
                }
            }
            if side < bc.final_pool {
                return Err(Error::Config(format!(
                    "image size {} leaves a {side}x{side} map, smaller than final_pool {}",
                    cfg.image_size, bc.final_pool
                )));
            }
            let pooled = (side - bc.final_pool) / bc.final_pool + 1;
            let flat_dim = width * pooled * pooled;
            let feat = lb.dense(&format!("{p}.feat"), flat_dim, bc.feature_dim);
            let head = cfg
                .fusion
                .uses_branch_heads()
                .then(|| lb.dense(&format!("{p}.head"), bc.feature_dim, k));
            branches.push(Branch {
                stem,
                blocks,
                flat_dim,
                feat,
                head,
            });
        }
        let shared = cfg.fusion.uses_shared().then(|| lb.dense("shared.fc", cfg.sketch_dim, k));
        let heads = match cfg.fusion {
            FusionMode::Full => NUM_MODALITIES + 1,
            FusionMode::BranchOnly => NUM_MODALITIES,
            FusionMode::SharedOnly => 1,
        };
        let fusion_in = heads * k + SupplementalFeatures::LEN;
        let fusion = lb.dense("fusion.fc", fusion_in, k);
        let plan = SketchPlan::new(bc.feature_dim, cfg.sketch_dim, cfg.sketch_seed)?;
        Ok(Model {
            cfg,
            plan,
            branches,
            shared,
            fusion,
            fusion_in,
            specs: lb.specs,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn plan(&self) -> &SketchPlan {
        &self.plan
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    pub fn fusion_input_dim(&self) -> usize {
        self.fusion_in
    }

    /// He-normal conv weights, uniform `+-1/sqrt(fan_in)` dense weights,
    /// zero biases.
    pub fn init_params<T: Scalar>(&self, rng: &mut impl Rng) -> ModelParams<T> {
        let tensors = self
            .specs
            .iter()
            .map(|spec| match spec.init {
                Init::Zero => Tensor::zeros(&spec.shape),
                Init::HeNormal { fan_in } => {
                    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                    Tensor::from_fn(&spec.shape, |_| T::lit(dist.sample(rng)))
                }
                Init::Uniform { fan_in } => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound);
                    Tensor::from_fn(&spec.shape, |_| T::lit(dist.sample(rng)))
                }
            })
            .collect();
        ModelParams {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Checks that `params` has this model's names and shapes.
    pub fn check_params<T: Scalar>(&self, params: &ModelParams<T>) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (spec, (name, t)) in self.specs.iter().zip(params.iter()) {
            if spec.name != name || spec.shape != t.shape() {
                return Err(Error::Validation(format!(
                    "parameter `{name}` {:?} does not match `{}` {:?}",
                    t.shape(),
                    spec.name,
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    fn conv(&self, tape: &mut Tape<impl Scalar>, p: &ParamVars, x: Var, c: Conv) -> Result<Var> {
        tape.conv2d(x, p.0[c.w], Some(p.0[c.b]), c.stride, c.pad)
    }

    fn dense<T: Scalar>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var, d: Dense) -> Result<Var> {
        let y = tape.matmul(x, p.0[d.w])?;
        tape.add_bias(y, p.0[d.b])
    }

    /// One modality branch on a `[B, 3, P, P]` batch. Returns the `[B, F]`
    /// features and, when the branch has a head, `[B, K]` logits.
    pub fn branch_forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamVars,
        modality: Modality,
        images: Var,
    ) -> Result<(Var, Option<Var>)> {
        let br = &self.branches[modality.index()];
        let batch = match tape.shape(images) {
            [b, 3, h, w] if *h == self.cfg.image_size && *w == self.cfg.image_size => *b,
            s => {
                return Err(Error::Dimension(format!(
                    "{modality} images must be [B, 3, {p}, {p}], got {s:?}",
                    p = self.cfg.image_size
                )))
            }
        };
        let mut x = self.conv(tape, params, images, br.stem)?;
        x = tape.relu(x)?;
        for block in &br.blocks {
            let h = self.conv(tape, params, x, block.conv1)?;
            let h = tape.relu(h)?;
            let h = self.conv(tape, params, h, block.conv2)?;
            let skip = match block.proj {
                Some(proj) => self.conv(tape, params, x, proj)?,
                None => x,
            };
            let sum = tape.add(h, skip)?;
            x = tape.relu(sum)?;
        }
        let pool = self.cfg.branch.final_pool;
        x = tape.maxpool2d(x, pool, pool)?;
        x = tape.reshape(x, &[batch, br.flat_dim])?;
        let feat = self.dense(tape, params, x, br.feat)?;
        let feat = tape.relu(feat)?;
        let logits = br.head.map(|h| self.dense(tape, params, feat, h)).transpose()?;
        Ok((feat, logits))
    }

    /// Pools the four `[B, F]` feature tensors with the compact bilinear
    /// sketch and maps the `[B, d]` result to `[B, K]` logits.
    pub fn shared_forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &ParamVars, features: &[Var]) -> Result<Var> {
        let shared = self
            .shared
            .ok_or_else(|| Error::Usage("model has no shared branch".into()))?;
        if features.len() != NUM_MODALITIES {
            return Err(Error::Dimension(format!(
                "shared branch takes {NUM_MODALITIES} feature tensors, got {}",
                features.len()
            )));
        }
        let first = tape.shape(features[0]).to_vec();
        if first.len() != 2 || first[1] != self.cfg.branch.feature_dim {
            return Err(Error::Dimension(format!(
                "features must be [B, {}], got {first:?}",
                self.cfg.branch.feature_dim
            )));
        }
        let mut pooled = tape_compact_bilinear(tape, features, &self.plan)?;
        if self.cfg.signed_sqrt_l2 {
            pooled = tape.signed_sqrt(pooled, T::lit(1e-8))?;
            pooled = tape.l2_normalize(pooled, T::lit(1e-12))?;
        }
        self.dense(tape, params, pooled, shared)
    }

    /// Cascades the head logits with the supplemental features `[B, 5]`
    /// and maps them to the fused `[B, K]` logits.
    pub fn fuse_forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamVars,
        branch_logits: &[Var],
        shared_logits: Option<Var>,
        supplemental: Var,
    ) -> Result<Var> {
        let mut parts: Vec<Var> = branch_logits.to_vec();
        parts.extend(shared_logits);
        parts.push(supplemental);
        let cascade = tape.concat(&parts, 1)?;
        if tape.shape(cascade)[1] != self.fusion_in {
            return Err(Error::Dimension(format!(
                "fusion expects {} cascaded inputs, got {}",
                self.fusion_in,
                tape.shape(cascade)[1]
            )));
        }
        self.dense(tape, params, cascade, self.fusion)
    }

    /// Full forward pass with every head's loss and the composite loss.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        params: &ParamVars,
        batch: &Batch<T>,
        weights: LossWeights,
    ) -> Result<ForwardOutputs> {
        weights.validate()?;
        let images = batch.images.clone().map(|t| tape.constant(t));
        let supplemental = tape.constant(batch.supplemental.clone());
        let mut features = Vec::with_capacity(NUM_MODALITIES);
        let mut branch_logits = Vec::with_capacity(NUM_MODALITIES);
        for m in Modality::ALL {
            let (f, l) = self.branch_forward(tape, params, m, images[m.index()])?;
            features.push(f);
            branch_logits.extend(l);
        }
        let shared_logits = if self.cfg.fusion.uses_shared() {
            Some(self.shared_forward(tape, params, &features)?)
        } else {
            None
        };
        let fused_logits = self.fuse_forward(tape, params, &branch_logits, shared_logits, supplemental)?;

        let labels = &batch.labels;
        let branch_losses = branch_logits
            .iter()
            .map(|&l| tape.softmax_cross_entropy(l, labels))
            .collect::<Result<Vec<_>>>()?;
        let shared_loss = shared_logits
            .map(|l| tape.softmax_cross_entropy(l, labels))
            .transpose()?;
        let fusion_loss = tape.softmax_cross_entropy(fused_logits, labels)?;

        let mut heads = branch_losses.iter().copied().chain(shared_loss);
        let mut head_sum = heads.next().expect("at least one head");
        for l in heads {
            head_sum = tape.add(head_sum, l)?;
        }
        let weighted_heads = tape.scale(head_sum, T::lit(weights.lambda1))?;
        let weighted_fusion = tape.scale(fusion_loss, T::lit(weights.lambda2))?;
        let total = tape.add(weighted_heads, weighted_fusion)?;

        Ok(ForwardOutputs {
            branch_logits,
            shared_logits,
            fused_logits,
            branch_losses,
            shared_loss,
            fusion_loss,
            total,
        })
    }

    /// Class probabilities for a batch of samples (no gradients recorded).
    pub fn predict<T: Scalar>(&self, params: &ModelParams<T>, samples: &[&Sample]) -> Result<Vec<Prediction>> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape, false);
        let batch = Batch::from_samples(samples, self.cfg.image_size, |_, img| img.data.clone())?;
        let out = self.forward(&mut tape, &vars, &batch, LossWeights::default())?;
        let k = self.cfg.num_classes;
        Ok(tape
            .value(out.fused_logits)
            .data()
            .chunks_exact(k)
            .map(|row| {
                let row: Vec<f64> = row.iter().map(|v| v.to_f64().unwrap()).collect();
                Prediction::from_logits(&row)
            })
            .collect())
    }
}

/// Tape handles for every parameter, in [`Model::param_specs`] order.
#[derive(Debug, Clone)]
pub struct ParamVars(pub Vec<Var>);

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Validation("parameter names and tensors differ in count".into()));
        }
        Ok(ModelParams { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every parameter as a leaf, trainable or constant.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ParamVars {
        ParamVars(
            self.tensors
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        )
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Model inputs for one mini-batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    /// Per modality, `[B, 3, P, P]`.
    pub images: [Tensor<T>; NUM_MODALITIES],
    /// `[B, 5]`
    pub supplemental: Tensor<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    /// Stacks samples; `image_fn(sample_index, image)` may transform each
    /// image (augmentation) and must return `3 * P * P` values.
    pub fn from_samples(
        samples: &[&Sample],
        image_size: usize,
        mut image_fn: impl FnMut(usize, &crate::preprocess::Image2D) -> Vec<f32>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let b = samples.len();
        let plane = 3 * image_size * image_size;
        let mut images: [Vec<T>; NUM_MODALITIES] = std::array::from_fn(|_| Vec::with_capacity(b * plane));
        let mut supplemental = Vec::with_capacity(b * SupplementalFeatures::LEN);
        for (i, s) in samples.iter().enumerate() {
            for m in Modality::ALL {
                let img = &s.images[m.index()];
                if img.size != image_size {
                    return Err(Error::Dimension(format!(
                        "sample {} {m} image is {}x{}, model expects {image_size}",
                        s.id, img.size, img.size
                    )));
                }
                let data = image_fn(i, img);
                images[m.index()].extend(data.iter().map(|&v| T::lit(v as f64)));
            }
            supplemental.extend(s.features.to_array().iter().map(|&v| T::lit(v)));
        }
        let shape = [b, 3, image_size, image_size];
        let images = images.map(|data| Tensor::new(shape.to_vec(), data));
        let [a, bb, c, d] = images;
        Ok(Batch {
            images: [a?, bb?, c?, d?],
            supplemental: Tensor::new(vec![b, SupplementalFeatures::LEN], supplemental)?,
            labels: samples.iter().map(|s| s.label.index()).collect(),
        })
    }
}

/// Trade-off weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the modality and shared head losses.
    pub lambda1: f64,
    /// Weight of the fusion loss.
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be non-negative, got lambda1={} lambda2={}",
                self.lambda1, self.lambda2
            )));
        }
        Ok(())
    }
}

/// Tape handles produced by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutputs {
    /// Empty when the model has no modality heads.
    pub branch_logits: Vec<Var>,
    pub shared_logits: Option<Var>,
    pub fused_logits: Var,
    pub branch_losses: Vec<Var>,
    pub shared_loss: Option<Var>,
    pub fusion_loss: Var,
    pub total: Var,
}

impl ForwardOutputs {
    pub fn loss_values<T: Scalar>(&self, tape: &Tape<T>) -> LossValues {
        let v = |x: Var| tape.value(x).item().to_f64().unwrap();
        LossValues {
            branch: self.branch_losses.iter().map(|&l| v(l)).collect(),
            shared: self.shared_loss.map(v),
            fusion: v(self.fusion_loss),
            total: v(self.total),
        }
    }
}

/// Scalar values of every loss term.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossValues {
    /// `L_T1, L_T1ce, L_T2, L_FLAIR` when the model has modality heads.
    pub branch: Vec<f64>,
    pub shared: Option<f64>,
    pub fusion: f64,
    pub total: f64,
}

/// `lambda1 * (sum of head losses) + lambda2 * fusion loss`.
pub fn total_loss(head_losses: &[f64], fusion_loss: f64, weights: LossWeights) -> Result<f64> {
    weights.validate()?;
    Ok(weights.lambda1 * head_losses.iter().sum::<f64>() + weights.lambda2 * fusion_loss)
}

impl LossValues {
    /// Composite loss recomputed from the stored components.
    pub fn recompose(&self, weights: LossWeights) -> Result<f64> {
        let heads: Vec<f64> = self.branch.iter().copied().chain(self.shared).collect();
        total_loss(&heads, self.fusion, weights)
    }
}

/// Predicted class with its softmax probabilities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: OSClass,
    pub probabilities: Vec<f64>,
}

impl Prediction {
    /// Argmax of the softmax; exact ties go to the lower class index.
    pub fn from_logits(logits: &[f64]) -> Self {
        let probabilities = softmax(logits);
        let mut best = 0;
        for (i, &p) in probabilities.iter().enumerate() {
            if p > probabilities[best] {
                best = i;
            }
        }
        Prediction {
            class: OSClass::from_index(best).expect("three classes"),
            probabilities,
        }
    }
}
