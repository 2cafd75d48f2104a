use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::AugmentDraw;
use super::folds::make_folds;
use super::metrics::{evaluate, Metrics, MetricsReport};
use super::optim::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::model::{Batch, Checkpoint, LossWeights, Model, ModelConfig, ModelParams, RngState};
use crate::preprocess::{OSClass, PreprocessConfig, Sample};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub augment: bool,
    /// Adds a random rotation in (-45, 45) degrees after the quarter turns.
    pub arbitrary_rotation: bool,
    pub folds: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            lambda1: 0.1,
            lambda2: 0.5,
            seed: 0,
            augment: true,
            arbitrary_rotation: false,
            folds: 10,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and weight_decay non-negative, got {} and {}",
                self.learning_rate, self.weight_decay
            )));
        }
        self.loss_weights().validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: ModelParams<f32>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochStats>,
    /// Every subject id that entered a gradient step.
    pub gradient_ids: BTreeSet<String>,
    pub rng: RngState,
}

/// Predictions of `params` on `samples`, scored against their labels.
pub fn evaluate_params(model: &Model, params: &ModelParams<f32>, samples: &[&Sample]) -> Result<Metrics> {
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(64) {
        preds.extend(model.predict(params, chunk)?.into_iter().map(|p| p.class));
    }
    let labels: Vec<OSClass> = samples.iter().map(|s| s.label).collect();
    evaluate(&preds, &labels)
}

/// Trains from `params`, keeping the epoch with the best validation
/// accuracy (earliest on ties). `fold` only labels errors.
pub fn fit(
    model: &Model,
    mut params: ModelParams<f32>,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    fold: usize,
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation(format!(
            "fold {fold}: empty training ({}) or validation ({}) set",
            train.len(),
            val.len()
        )));
    }
    model.check_params(&params)?;
    let adam = cfg.adam();
    let weights = cfg.loss_weights();
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut gradient_ids = BTreeSet::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let batch_samples: Vec<&Sample> = idx.iter().map(|&i| train[i]).collect();
            let draws: Vec<AugmentDraw> = batch_samples
                .iter()
                .map(|_| {
                    if cfg.augment {
                        AugmentDraw::sample(rng, cfg.arbitrary_rotation)
                    } else {
                        AugmentDraw::IDENTITY
                    }
                })
                .collect();
            let batch = Batch::from_samples(&batch_samples, model.config().image_size, |i, img| {
                if draws[i] == AugmentDraw::IDENTITY {
                    img.data.clone()
                } else {
                    draws[i].apply(img).data
                }
            })?;
            let mut tape = Tape::new();
            let vars = params.register(&mut tape, true);
            let out = model.forward(&mut tape, &vars, &batch, weights)?;
            let loss = tape.value(out.total).item() as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { fold, epoch, loss });
            }
            let mut grads = tape.backward(out.total)?;
            let g: Vec<Tensor<f32>> = vars
                .0
                .iter()
                .zip(params.tensors())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
                .collect();
            adam_step(&mut params, &g, &mut state, &adam)?;
            gradient_ids.extend(batch_samples.iter().map(|s| s.id.clone()));
            loss_sum += loss;
            batches += 1;
        }
        let val_accuracy = evaluate_params(model, &params, val)?.accuracy;
        log::debug!("fold {fold} epoch {epoch}: loss {:.6} val acc {val_accuracy:.6}", loss_sum / batches as f64);
        history.push(EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
            val_accuracy,
        });
        if best.as_ref().map_or(true, |(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, params.clone()));
        }
    }
    let (best_val_accuracy, best_epoch, params) = best.expect("at least one epoch");
    Ok(FitResult {
        params,
        best_epoch,
        best_val_accuracy,
        history,
        gradient_ids,
        rng: RngState::capture(rng),
    })
}

#[derive(Debug, Clone, Default)]
pub struct CvOptions {
    /// Writes `fold_XX.ckpt` files here when set.
    pub checkpoint_dir: Option<PathBuf>,
    /// Runs folds on the rayon pool.
    pub parallel: bool,
    /// Replaces labels by a seeded permutation (chance-level control).
    pub shuffle_labels: bool,
    /// Stored in each checkpoint so it can be applied to raw volumes later.
    pub preprocess: Option<PreprocessConfig>,
}

/// Which subjects touched which stage of one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldAudit {
    pub gradient_ids: BTreeSet<String>,
    pub selection_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

impl FoldAudit {
    /// True when no held-out subject was used for training or selection.
    pub fn is_clean(&self) -> bool {
        self.test_ids.is_disjoint(&self.gradient_ids) && self.test_ids.is_disjoint(&self.selection_ids)
    }
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub metrics: Metrics,
    pub audit: FoldAudit,
    pub history: Vec<EpochStats>,
    pub checkpoint: Checkpoint<f32>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub folds: Vec<FoldOutcome>,
}

/// Config JSON stored in each fold checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub fold: usize,
    pub preprocess: Option<PreprocessConfig>,
}

impl CheckpointMeta {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("configs serialise")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

fn fold_rng(seed: u64, fold: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + fold as u64);
    rng
}

/// Stratified k-fold cross-validation. Every fold trains from a fresh
/// initialisation; folds are independent and deterministic given the seed.
pub fn run_cv(samples: &[Sample], model_cfg: &ModelConfig, cfg: &TrainConfig, opts: &CvOptions) -> Result<CvOutcome> {
    cfg.validate()?;
    let model = Model::new(model_cfg.clone())?;
    let mut samples = samples.to_vec();
    if opts.shuffle_labels {
        let mut labels: Vec<OSClass> = samples.iter().map(|s| s.label).collect();
        labels.shuffle(&mut fold_rng(cfg.seed, usize::MAX - 1000));
        for (s, l) in samples.iter_mut().zip(labels) {
            s.label = l;
        }
    }
    let labels: Vec<OSClass> = samples.iter().map(|s| s.label).collect();
    let plan = make_folds(&labels, cfg.folds, cfg.val_fraction, cfg.seed)?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run_fold = |fold: usize| -> Result<FoldOutcome> {
        let pick = |idx: &[usize]| idx.iter().map(|&i| &samples[i]).collect::<Vec<_>>();
        let inner = &plan.inner[fold];
        let (train, val, test) = (pick(&inner.train), pick(&inner.val), pick(&plan.test_indices(fold)));
        let mut rng = fold_rng(cfg.seed, fold);
        let init = model.init_params::<f32>(&mut rng);
        let fit = fit(&model, init, &train, &val, cfg, &mut rng, fold)?;
        let metrics = evaluate_params(&model, &fit.params, &test)?;
        let ids = |v: &[&Sample]| v.iter().map(|s| s.id.clone()).collect::<BTreeSet<_>>();
        let audit = FoldAudit {
            gradient_ids: fit.gradient_ids,
            selection_ids: ids(&val),
            test_ids: ids(&test),
        };
        if !audit.is_clean() {
            return Err(Error::Validation(format!("fold {fold}: held-out subject leaked into training")));
        }
        let checkpoint = Checkpoint {
            config_json: CheckpointMeta {
                model: model_cfg.clone(),
                train: cfg.clone(),
                fold,
                preprocess: opts.preprocess.clone(),
            }
            .to_json(),
            rng: fit.rng,
            params: fit.params,
        };
        if let Some(dir) = &opts.checkpoint_dir {
            checkpoint.save(&dir.join(format!("fold_{fold:02}.ckpt")))?;
        }
        log::info!(
            "fold {fold}: best epoch {} (val acc {:.6}), test acc {:.6}",
            fit.best_epoch,
            fit.best_val_accuracy,
            metrics.accuracy
        );
        Ok(FoldOutcome {
            fold,
            best_epoch: fit.best_epoch,
            best_val_accuracy: fit.best_val_accuracy,
            metrics,
            audit,
            history: fit.history,
            checkpoint,
        })
    };
    let folds: Vec<FoldOutcome> = if opts.parallel {
        (0..plan.k).into_par_iter().map(run_fold).collect::<Result<_>>()?
    } else {
        (0..plan.k).map(run_fold).collect::<Result<_>>()?
    };
    let report = MetricsReport::from_folds(folds.iter().map(|f| f.metrics.clone()).collect())?;
    Ok(CvOutcome { report, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{random_samples, tiny_model_config};
    use crate::model::FusionMode;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 8,
            folds: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn constant_predictor_scores_majority_prevalence() {
        let model = Model::new(tiny_model_config(FusionMode::Full, false, 0)).unwrap();
        let mut params = model.init_params::<f32>(&mut ChaCha8Rng::seed_from_u64(0));
        let w = params.get_mut("fusion.fc.w").unwrap();
        *w = Tensor::zeros(w.shape());
        *params.get_mut("fusion.fc.b").unwrap() = Tensor::vector(vec![0.0, 0.0, 5.0]);
        let mut samples = random_samples(&mut ChaCha8Rng::seed_from_u64(1), 20, 4);
        for (i, s) in samples.iter_mut().enumerate() {
            s.label = OSClass::from_index([0, 1, 2, 2][i % 4]).unwrap();
        }
        let refs: Vec<&Sample> = samples.iter().collect();
        let m = evaluate_params(&model, &params, &refs).unwrap();
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn cv_is_deterministic_and_audited() {
        let samples = random_samples(&mut ChaCha8Rng::seed_from_u64(2), 15, 4);
        let mc = tiny_model_config(FusionMode::Full, true, 1);
        let cfg = TrainConfig { augment: false, ..quick_cfg() };
        let a = run_cv(&samples, &mc, &cfg, &CvOptions::default()).unwrap();
        let b = run_cv(&samples, &mc, &cfg, &CvOptions { parallel: true, ..Default::default() }).unwrap();
        assert_eq!(a.report, b.report);
        for (x, y) in a.folds.iter().zip(&b.folds) {
            assert_eq!(x.checkpoint.to_bytes(), y.checkpoint.to_bytes());
            assert!(x.audit.is_clean());
            assert!(!x.audit.gradient_ids.is_empty());
        }
    }

    #[test]
    fn checkpoints_are_written() {
        let samples = random_samples(&mut ChaCha8Rng::seed_from_u64(3), 12, 4);
        let dir = tempfile::tempdir().unwrap();
        let opts = CvOptions {
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..Default::default()
        };
        let out = run_cv(&samples, &tiny_model_config(FusionMode::BranchOnly, false, 0), &quick_cfg(), &opts).unwrap();
        for f in &out.folds {
            let path = dir.path().join(format!("fold_{:02}.ckpt", f.fold));
            let back = Checkpoint::<f32>::load(&path).unwrap();
            assert_eq!(back, f.checkpoint);
            let meta = CheckpointMeta::from_json(&back.config_json).unwrap();
            assert_eq!(meta.fold, f.fold);
        }
    }

    #[test]
    fn best_epoch_is_earliest_maximum() {
        let samples = random_samples(&mut ChaCha8Rng::seed_from_u64(4), 10, 4);
        let refs: Vec<&Sample> = samples.iter().collect();
        let model = Model::new(tiny_model_config(FusionMode::Full, false, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let init = model.init_params(&mut rng);
        let cfg = TrainConfig { epochs: 4, batch_size: 4, ..TrainConfig::default() };
        let r = fit(&model, init, &refs, &refs[..3], &cfg, &mut rng, 0).unwrap();
        let best = r.history.iter().map(|h| h.val_accuracy).fold(f64::MIN, f64::max);
        let first = r.history.iter().position(|h| h.val_accuracy == best).unwrap();
        assert_eq!(r.best_epoch, first);
        assert_eq!(r.best_val_accuracy, best);
    }

    #[test]
    fn divergence_is_reported() {
        let mut samples = random_samples(&mut ChaCha8Rng::seed_from_u64(6), 4, 4);
        samples[0].features.s_age = f64::INFINITY;
        let refs: Vec<&Sample> = samples.iter().collect();
        let model = Model::new(tiny_model_config(FusionMode::Full, false, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = model.init_params(&mut rng);
        let cfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let err = fit(&model, init, &refs, &refs, &cfg, &mut rng, 3).unwrap_err();
        assert!(matches!(err, Error::Diverged { fold: 3, .. } | Error::Validation(_)), "{err}");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig { lambda1: -1.0, ..TrainConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
