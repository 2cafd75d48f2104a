use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use survnet_core::config::RunConfig;
use survnet_core::data::{
    build_report, digest_hex, encode_cache, generate_synthetic, load_manifest, load_subject, read_cache,
    read_manifest, round_json, write_cache, write_reports, SignalMode, SynthSpec,
};
use survnet_core::gradcheck::run_suite;
use survnet_core::harness::{evaluate_params, run_cv, CheckpointMeta, CvOptions, Metrics};
use survnet_core::model::{Checkpoint, FusionMode, Model};
use survnet_core::preprocess::{preprocess_all, preprocess_subject, OSClass, PreprocessConfig, Sample};
use survnet_core::sketch::{approximation_study, StudyConfig};
use survnet_core::Error;

#[derive(Parser)]
#[command(name = "survnet", version, about = "Survival-class prediction from multi-modal MR volumes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort and its manifest.
    Synth(SynthArgs),
    /// Preprocess a manifest into a sample cache.
    Preprocess(PreprocessArgs),
    /// Cross-validate a model and write reports and fold checkpoints.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Predict the class of one subject.
    Predict(PredictArgs),
    /// Sketch approximation error and latency as CSV.
    SketchBench(SketchBenchArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Signal {
    Global,
    ModalitySpecific,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 120)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Volume dims as D,H,W.
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<usize>>,
    /// Short,Mid,Long proportions.
    #[arg(long, value_delimiter = ',')]
    mix: Option<Vec<f64>>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long, value_enum, default_value_t = Signal::Global)]
    signal: Signal,
}

#[derive(Args)]
struct DataArgs {
    /// Raw dataset manifest (preprocessed with the run config).
    #[arg(long, conflicts_with = "cache", required_unless_present = "cache")]
    manifest: Option<PathBuf>,
    /// Sample cache written by `preprocess`.
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML run config supplying crop and image_size.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    crop: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    sketch_dim: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    augment: Option<bool>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<FusionMode>,
    /// Train folds concurrently.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Also write the metrics as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    subject: String,
}

#[derive(Args)]
struct SketchBenchArgs {
    #[arg(long, default_value_t = 64)]
    input_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pairs: usize,
    #[arg(long, default_value_t = 10)]
    plans: usize,
    #[arg(long, default_value_t = 4)]
    set_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip timing the direct convolution.
    #[arg(long)]
    no_direct: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = survnet_core::gradcheck::DEFAULT_TOLERANCE)]
    tolerance: f64,
}

fn parse_fusion(s: &str) -> Result<FusionMode, String> {
    match s {
        "full" => Ok(FusionMode::Full),
        "branch_only" | "branch-only" => Ok(FusionMode::BranchOnly),
        "shared_only" | "shared-only" => Ok(FusionMode::SharedOnly),
        _ => Err(format!("unknown fusion mode `{s}` (full, branch_only, shared_only)")),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            Ok(RunConfig::from_toml_str(&text)?)
        }
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Samples from a cache, or from a manifest preprocessed with `cfg`.
fn load_samples(data: &DataArgs, cfg: &PreprocessConfig) -> Result<(PreprocessConfig, Vec<Sample>)> {
    if let Some(cache) = &data.cache {
        return Ok(read_cache(cache)?);
    }
    let manifest = data.manifest.as_ref().expect("clap requires one source");
    let records = load_manifest(manifest)?;
    Ok((cfg.clone(), preprocess_all(&records, cfg)?))
}

fn print_metrics(m: &Metrics) {
    println!("n {}", m.n);
    println!("accuracy {:.6}", m.accuracy);
    println!("precision {:.6}", m.precision);
    println!("recall {:.6}", m.recall);
    println!("f_score {:.6}", m.f_score);
    if m.zero_division {
        println!("zero_division true");
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec {
        n_subjects: a.n,
        seed: a.seed,
        signal: match a.signal {
            Signal::Global => SignalMode::Global,
            Signal::ModalitySpecific => SignalMode::ModalitySpecific,
        },
        ..SynthSpec::default()
    };
    if let Some(d) = a.dims {
        spec.dims = triple(&d, "--dims")?;
    }
    if let Some(m) = a.mix {
        spec.class_mix = triple(&m, "--mix")?;
    }
    spec.noise_sigma = a.noise.unwrap_or(spec.noise_sigma);
    spec.jitter = a.jitter.unwrap_or(spec.jitter);
    let manifest = generate_synthetic(&spec, &a.out)?;
    let counts = spec.class_counts();
    println!("manifest {}", manifest.display());
    println!("subjects {} (short {}, mid {}, long {})", spec.n_subjects, counts[0], counts[1], counts[2]);
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?.preprocess();
    cfg.crop = a.crop.unwrap_or(cfg.crop);
    cfg.size = a.size.unwrap_or(cfg.size);
    let records = load_manifest(&a.manifest)?;
    let samples = preprocess_all(&records, &cfg)?;
    write_cache(&a.out, &cfg, &samples)?;
    println!("samples {}", samples.len());
    println!("image_size {}", cfg.size);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(epochs, batch_size, learning_rate, weight_decay, lambda1, lambda2, sketch_dim, feature_dim, seed, augment, folds, fusion);
    cfg.validate()?;
    let (pre, samples) = load_samples(&a.data, &cfg.preprocess())?;
    if pre.size != cfg.image_size {
        bail!(Error::Config(format!(
            "cache images are {0}x{0} but image_size is {1}",
            pre.size, cfg.image_size
        )));
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let opts = CvOptions {
        checkpoint_dir: Some(a.out.join("checkpoints")),
        parallel: a.parallel,
        shuffle_labels: false,
        preprocess: Some(pre.clone()),
    };
    let outcome = run_cv(&samples, &cfg.model(), &cfg.train(), &opts)?;
    let data_digest = digest_hex(&encode_cache(&pre, &samples)?);
    let echo = serde_json::json!({ "run": cfg, "preprocess": pre });
    let report = build_report(&outcome, &echo, cfg.seed, &data_digest);
    write_reports(&a.out, &outcome, &report)?;
    write_file(&a.out.join("config.toml"), toml::to_string(&cfg)?)?;
    let (m, s) = (&outcome.report.mean, &outcome.report.std);
    println!("run_id {}", report["run_id"].as_str().unwrap_or_default());
    println!("accuracy {:.6} +- {:.6}", m.accuracy, s.accuracy);
    println!("precision {:.6} +- {:.6}", m.precision, s.precision);
    println!("recall {:.6} +- {:.6}", m.recall, s.recall);
    println!("f_score {:.6} +- {:.6}", m.f_score, s.f_score);
    Ok(())
}

fn open_checkpoint(path: &Path) -> Result<(Checkpoint<f32>, CheckpointMeta, Model)> {
    let ck = Checkpoint::<f32>::load(path)?;
    let meta = CheckpointMeta::from_json(&ck.config_json).context("checkpoint config")?;
    let model = Model::new(meta.model.clone())?;
    model.check_params(&ck.params)?;
    Ok((ck, meta, model))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let (ck, meta, model) = open_checkpoint(&a.checkpoint)?;
    let pre = meta.preprocess.clone().unwrap_or_default();
    let (_, samples) = load_samples(&a.data, &pre)?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let m = evaluate_params(&model, &ck.params, &refs)?;
    print_metrics(&m);
    if let Some(out) = a.out {
        let mut v = serde_json::to_value(&m)?;
        round_json(&mut v);
        write_file(&out, serde_json::to_string_pretty(&v)? + "\n")?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (ck, meta, model) = open_checkpoint(&a.checkpoint)?;
    let sample = if let Some(cache) = &a.data.cache {
        let (_, samples) = read_cache(cache)?;
        samples.into_iter().find(|s| s.id == a.subject)
    } else {
        let manifest = a.data.manifest.as_ref().expect("clap requires one source");
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        match read_manifest(manifest)?.into_iter().find(|r| r.subject_id == a.subject) {
            Some(row) => Some(preprocess_subject(&load_subject(&base, &row)?, &meta.preprocess.unwrap_or_default())?),
            None => None,
        }
    };
    let Some(sample) = sample else {
        bail!(Error::Usage(format!("subject `{}` not found", a.subject)));
    };
    let p = model.predict(&ck.params, &[&sample])?.remove(0);
    println!("subject {}", sample.id);
    println!("class {}", p.class);
    for c in OSClass::ALL {
        println!("p_{} {:.6}", c.name(), p.probabilities[c.index()]);
    }
    Ok(())
}

fn sketch_bench(a: SketchBenchArgs) -> Result<()> {
    let rows = approximation_study(&StudyConfig {
        input_dim: a.input_dim,
        sketch_dims: a.dims,
        pairs: a.pairs,
        plans: a.plans,
        set_size: a.set_size,
        seed: a.seed,
        time_direct: !a.no_direct,
    })?;
    let mut csv = String::from("sketch_dim,mean_rel_err,p95_rel_err,wall_time_direct,wall_time_fft\n");
    for r in rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.sketch_dim, r.mean_rel_err, r.p95_rel_err, r.wall_time_direct, r.wall_time_fft
        ));
    }
    match a.out {
        Some(p) => write_file(&p, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let reports = run_suite(a.seeds, a.seed, a.tolerance)?;
    println!("{:<24} {:>6} {:>14}  status", "op", "seeds", "max_rel_err");
    for r in &reports {
        println!(
            "{:<24} {:>6} {:>14.6}  {}",
            r.name,
            r.seeds,
            r.max_rel_err,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        bail!("{failed} operation(s) failed the gradient check at tolerance {:.6}", a.tolerance);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Predict(a) => predict(a),
        Command::SketchBench(a) => sketch_bench(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Error>() {
                Some(Error::Usage(_) | Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn triple<T: Copy>(v: &[T], flag: &str) -> Result<[T; 3]> {
    match v {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!(Error::Usage(format!("{flag} takes exactly 3 comma-separated values, got {}", v.len()))),
    }
}
