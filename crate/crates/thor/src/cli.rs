//! Command-line pipelines: dataset synthesis, training, restoration,
//! scoring, evaluation and the noise-level ablation. The `thor` binary is a
//! thin wrapper around [`run`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::MultiScaleStructural;
use crate::data::{build_dataset, DatasetConfig, DatasetManifest, Split};
use crate::denoiser::{
    load_checkpoint, save_checkpoint, train, write_training_curve, DenoiserConfig, DenoiserModel,
    TrainConfig,
};
use crate::eval::{ablate, run_experiment, score_image, DetectionRule, EvalSettings, Method};
use crate::grid::ImageGrid;
use crate::io;
use crate::noise::{sample_noise, NoiseKind, NoiseSpec};
use crate::restoration::{restore_thor, HarmonizationPlan};
use crate::schedule::NoiseSchedule;

/// Environment variable naming the default output root directory.
pub const OUT_ROOT_ENV: &str = "THOR_OUT";

#[derive(Parser)]
#[command(name = "thor", version, about = "Diffusion-based anomaly detection via harmonized restoration")]
pub struct Cli {
    /// Print the summary as one JSON object instead of prose.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate the synthetic phantom benchmark.
    Synth(SynthArgs),
    /// Train an epsilon-predicting denoiser on the healthy split.
    Train(TrainArgs),
    /// Restore one image and dump the per-step trace.
    Restore(RestoreArgs),
    /// Compute an anomaly score map for one image.
    Score(ScoreArgs),
    /// Export a raw noise field (debugging aid).
    Noise(NoiseArgs),
    /// Evaluate a checkpoint on the anomalous test split.
    Eval(EvalArgs),
    /// Sweep methods and noise levels; write the ablation table.
    Ablate(AblateArgs),
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn out_or_default(out: &Option<PathBuf>, subdir: &str) -> PathBuf {
    match out {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "thor-out".into());
            Path::new(&root).join(subdir)
        }
    }
}

fn require_file(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

/// Declarative description of a run, embedded in every run record; its hash
/// plus the crate version identifies a result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub args: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<NoiseSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_spec: Option<NoiseSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub denoiser: Option<DenoiserConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<HarmonizationPlan>,
}

impl RunConfig {
    fn new(command: &str, args: impl Serialize) -> Self {
        RunConfig {
            command: command.into(),
            args: serde_json::to_value(args).expect("serializable args"),
            schedule: None,
            noise_spec: None,
            denoiser: None,
            plan: None,
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run config serialization");
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    version: &'static str,
    config: &'a RunConfig,
    config_hash: String,
    seed: u64,
    wall_time_seconds: f64,
}

fn write_run_record(dir: &Path, config: &RunConfig, seed: u64, started: Instant) -> anyhow::Result<()> {
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        config,
        config_hash: config.hash(),
        seed,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join("run_record.json"), serde_json::to_vec_pretty(&record)?)?;
    Ok(())
}

fn emit(json: bool, summary: impl Serialize, prose: String) {
    if json {
        println!("{}", serde_json::to_string(&summary).expect("summary serialization"));
    } else {
        println!("{prose}");
    }
}

/// Harmonization steps evenly spaced over the bottom third of the chain:
/// 3k·t_start/(10n) for k = n..1, matching the default plan at n = 3.
fn spaced_steps(t_start: usize, n: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (1..=n)
        .rev()
        .map(|k| (3 * k * t_start).div_ceil(10 * n))
        .collect();
    steps.dedup();
    steps.retain(|&s| (1..=t_start).contains(&s));
    steps
}

fn build_plan(
    method: Method,
    t_start: usize,
    steps: Option<usize>,
    step_list: &Option<Vec<usize>>,
    stochastic: bool,
) -> HarmonizationPlan {
    let mut plan = match method {
        Method::Ddpm => HarmonizationPlan::plain(t_start),
        Method::Thor => match step_list {
            Some(list) => HarmonizationPlan {
                t_start,
                harmonization_steps: list.clone(),
                ..HarmonizationPlan::plain(t_start)
            },
            None => HarmonizationPlan {
                t_start,
                harmonization_steps: spaced_steps(t_start, steps.unwrap_or(3)),
                ..HarmonizationPlan::plain(t_start)
            },
        },
    };
    plan.stochastic_reverse = stochastic;
    plan
}

fn load_model(path: &Path) -> anyhow::Result<DenoiserModel> {
    require_file(path, "checkpoint")?;
    load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_manifest(path: &Path) -> anyhow::Result<(DatasetManifest, PathBuf)> {
    require_file(path, "manifest")?;
    let manifest = DatasetManifest::load(path)
        .with_context(|| format!("loading manifest {}", path.display()))?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((manifest, dir))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Square image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 96)]
    pub n_train: usize,
    #[arg(long, default_value_t = 16)]
    pub n_test_healthy: usize,
    /// Anomalous test images per size class.
    #[arg(long, default_value_t = 20)]
    pub n_per_class: usize,
}

fn cmd_synth(args: &SynthArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let out = out_or_default(&args.out, "dataset");
    let config = DatasetConfig {
        seed: args.seed,
        size: (args.size, args.size),
        n_train: args.n_train,
        n_test_healthy: args.n_test_healthy,
        n_test_anomalous_per_class: args.n_per_class,
    };
    let manifest = build_dataset(&config, &out)?;
    let run = RunConfig::new("synth", args);
    write_run_record(&out, &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        manifest: PathBuf,
        manifest_hash: String,
        n_records: usize,
    }
    let summary = Summary {
        manifest: out.join("manifest.json"),
        manifest_hash: manifest.hash(),
        n_records: manifest.records.len(),
    };
    emit(
        json,
        &summary,
        format!(
            "wrote {} records to {} (manifest hash {})",
            summary.n_records,
            out.display(),
            &summary.manifest_hash[..12]
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "gaussian")]
    pub noise: NoiseKind,
    #[arg(long, default_value_t = 100)]
    pub t_max: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub beta_min: f64,
    #[arg(long, default_value_t = 0.2)]
    pub beta_max: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub embed_dim: usize,
}

fn cmd_train(args: &TrainArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let (manifest, dir) = load_manifest(&args.manifest)?;
    let images: Vec<ImageGrid> = manifest
        .records_in(Split::Train)
        .map(|rec| io::read_png16(&dir.join(&rec.image)))
        .collect::<crate::Result<_>>()?;
    if images.is_empty() {
        bail!("manifest {} has no training records", args.manifest.display());
    }

    let schedule = NoiseSchedule::linear(args.t_max, args.beta_min, args.beta_max)?;
    let noise_spec = NoiseSpec {
        kind: args.noise,
        seed: args.seed,
        ..NoiseSpec::gaussian(args.seed)
    };
    let dcfg = DenoiserConfig {
        base_channels: args.base_channels,
        depth: args.depth,
        time_embed_dim: args.embed_dim,
        image_size: manifest.size,
    };
    let tcfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.lr,
        seed: args.seed,
        noise_spec: noise_spec.clone(),
    };
    let output = train(&images, &schedule, &tcfg, &dcfg)?;

    let out = match &args.out {
        Some(p) => p.clone(),
        None => out_or_default(&None, "train").join(format!("model_{}.ckpt", args.noise)),
    };
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    save_checkpoint(&output.model, &out)?;
    let curve_path = out.with_extension("curve.csv");
    write_training_curve(&output.curve, &curve_path)?;

    let mut run = RunConfig::new("train", args);
    run.schedule = Some(schedule);
    run.noise_spec = Some(noise_spec);
    run.denoiser = Some(dcfg);
    write_run_record(out.parent().unwrap_or(Path::new(".")), &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        checkpoint: PathBuf,
        params: usize,
        epochs: usize,
        final_loss: f64,
    }
    let summary = Summary {
        checkpoint: out.clone(),
        params: output.model.num_params(),
        epochs: args.epochs,
        final_loss: output.curve.last().map(|(_, l)| *l).unwrap_or(f64::NAN),
    };
    emit(
        json,
        &summary,
        format!(
            "trained {} params for {} epochs (final loss {:.5}) -> {}",
            summary.params,
            summary.epochs,
            summary.final_loss,
            out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// restore / score
// ---------------------------------------------------------------------------

#[derive(Args, Serialize)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input image (16-bit grayscale PNG).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "thor")]
    pub method: Method,
    /// Starting noise level; defaults to 35% of the schedule length.
    #[arg(long)]
    pub t_start: Option<usize>,
    /// Number of evenly spaced harmonization steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Explicit harmonization timesteps, descending (overrides --steps).
    #[arg(long, value_delimiter = ',')]
    pub step_list: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = false)]
    pub stochastic: bool,
}

fn cmd_restore(args: &RestoreArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let model = load_model(&args.checkpoint)?;
    require_file(&args.input, "input image")?;
    let input = io::read_png16(&args.input)?;
    let out = out_or_default(&args.out, "restore");
    fs::create_dir_all(&out)?;

    let t_start = args
        .t_start
        .unwrap_or_else(|| (model.schedule().t_max() * 35).div_ceil(100));
    let plan = build_plan(args.method, t_start, args.steps, &args.step_list, args.stochastic);
    let metric = MultiScaleStructural::default();
    let run_spec = NoiseSpec {
        seed: args.seed,
        ..model.noise_spec().clone()
    };
    let trace = restore_thor(
        &model,
        &input,
        &plan,
        model.schedule(),
        &run_spec,
        &metric,
        args.seed,
    )?;

    io::write_png16(&out.join("restored.png"), &trace.final_image)?;
    let mut map_files = Vec::new();
    for (t, map) in &trace.per_step_maps {
        let name = format!("map_t{t:04}");
        io::write_heatmap_png(&out.join(format!("{name}.png")), map)?;
        io::write_f32_grid(
            &out.join(format!("{name}.f32")),
            map,
            &io::GridSidecar {
                height: map.height(),
                width: map.width(),
                noise_spec: None,
                draw_index: None,
            },
        )?;
        map_files.push(name);
    }
    // Panel uses the last captured map as the display heatmap.
    if let Some((_, last_map)) = trace.per_step_maps.last() {
        io::write_panel_png(&out.join("panel.png"), &input, &trace.final_image, last_map, None)?;
    }

    let mut run = RunConfig::new("restore", args);
    run.schedule = Some(model.schedule().clone());
    run.noise_spec = Some(run_spec);
    run.denoiser = Some(model.config().clone());
    run.plan = Some(plan);
    write_run_record(&out, &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        out: PathBuf,
        t_start: usize,
        n_step_maps: usize,
        restored_mean: f64,
    }
    let summary = Summary {
        out: out.clone(),
        t_start,
        n_step_maps: map_files.len(),
        restored_mean: trace.final_image.mean(),
    };
    emit(
        json,
        &summary,
        format!(
            "restored {} at t_start={} with {} step map(s) -> {}",
            args.input.display(),
            t_start,
            summary.n_step_maps,
            out.display()
        ),
    );
    Ok(())
}

#[derive(Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "thor")]
    pub method: Method,
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn cmd_score(args: &ScoreArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let model = load_model(&args.checkpoint)?;
    require_file(&args.input, "input image")?;
    let input = io::read_png16(&args.input)?;
    let out = out_or_default(&args.out, "score");
    fs::create_dir_all(&out)?;

    let t_start = args
        .t_start
        .unwrap_or_else(|| (model.schedule().t_max() * 35).div_ceil(100));
    let mut settings = EvalSettings::new(args.method, t_start, args.seed);
    if let Some(n) = args.steps {
        settings.harmonization_steps = Some(spaced_steps(t_start, n));
    }
    let score = score_image(&model, &input, &settings)?;

    io::write_f32_grid(
        &out.join("score.f32"),
        &score,
        &io::GridSidecar {
            height: score.height(),
            width: score.width(),
            noise_spec: None,
            draw_index: None,
        },
    )?;
    io::write_heatmap_png(&out.join("score.png"), &score)?;

    let mut run = RunConfig::new("score", args);
    run.schedule = Some(model.schedule().clone());
    run.plan = Some(settings.plan());
    write_run_record(&out, &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        out: PathBuf,
        t_start: usize,
        score_mean: f64,
        score_max: f64,
    }
    let summary = Summary {
        out: out.clone(),
        t_start,
        score_mean: score.mean(),
        score_max: score.max(),
    };
    emit(
        json,
        &summary,
        format!(
            "score map for {}: mean {:.5}, max {:.5} -> {}",
            args.input.display(),
            summary.score_mean,
            summary.score_max,
            out.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// noise
// ---------------------------------------------------------------------------

#[derive(Args, Serialize)]
pub struct NoiseArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "simplex")]
    pub kind: NoiseKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 0)]
    pub draw: u64,
    #[arg(long, default_value_t = 6)]
    pub octaves: u32,
    #[arg(long, default_value_t = 0.8)]
    pub persistence: f64,
    #[arg(long, default_value_t = 32.0)]
    pub base_period: f64,
}

fn cmd_noise(args: &NoiseArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let out_dir = out_or_default(&args.out, "noise");
    fs::create_dir_all(&out_dir)?;
    let spec = NoiseSpec {
        kind: args.kind,
        seed: args.seed,
        simplex_octaves: args.octaves,
        simplex_persistence: args.persistence,
        simplex_base_period: args.base_period,
    };
    let field = sample_noise(&spec, (args.height, args.width), args.draw)?;
    let path = out_dir.join(format!("{}_{}.f32", args.kind, args.draw));
    io::write_f32_grid(
        &path,
        &field,
        &io::GridSidecar {
            height: args.height,
            width: args.width,
            noise_spec: Some(spec.clone()),
            draw_index: Some(args.draw),
        },
    )?;
    io::write_heatmap_png(&path.with_extension("png"), &field)?;
    let mut run = RunConfig::new("noise", args);
    run.noise_spec = Some(spec);
    write_run_record(&out_dir, &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        out: PathBuf,
        mean: f64,
        variance: f64,
    }
    let summary = Summary {
        out: path.clone(),
        mean: field.mean(),
        variance: field.variance(),
    };
    emit(
        json,
        &summary,
        format!(
            "{} field (mean {:.4}, var {:.4}) -> {}",
            args.kind, summary.mean, summary.variance, path.display()
        ),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval / ablate
// ---------------------------------------------------------------------------

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "thor")]
    pub method: Method,
    /// Expected noise kind; errors if the checkpoint disagrees.
    #[arg(long)]
    pub noise: Option<NoiseKind>,
    #[arg(long)]
    pub t_start: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub n_thresholds: usize,
    #[arg(long, default_value_t = 4)]
    pub min_component_area: usize,
    #[arg(long, default_value_t = 0.25)]
    pub overlap_fraction: f64,
    /// Restoration runs averaged per image.
    #[arg(long, default_value_t = 3)]
    pub n_seeds: usize,
    /// Use the deterministic reverse chain instead of stochastic
    /// ancestral sampling.
    #[arg(long)]
    pub deterministic: bool,
}

fn cmd_eval(args: &EvalArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let model = load_model(&args.checkpoint)?;
    let (manifest, dir) = load_manifest(&args.manifest)?;
    if let Some(expected) = args.noise {
        if model.noise_spec().kind != expected {
            bail!(
                "checkpoint {} was trained with {} noise, not {}",
                args.checkpoint.display(),
                model.noise_spec().kind,
                expected
            );
        }
    }
    let out = out_or_default(&args.out, "eval");

    let t_start = args
        .t_start
        .unwrap_or_else(|| (model.schedule().t_max() * 35).div_ceil(100));
    let mut settings = EvalSettings::new(args.method, t_start, args.seed);
    settings.n_thresholds = args.n_thresholds;
    settings.n_seeds = args.n_seeds;
    settings.stochastic_reverse = !args.deterministic;
    settings.rule = DetectionRule {
        min_component_area: args.min_component_area,
        overlap_fraction: args.overlap_fraction,
    };
    if let Some(n) = args.steps {
        settings.harmonization_steps = Some(spaced_steps(t_start, n));
    }
    let report = run_experiment(&dir, &manifest, &model, &settings, Some(&out))?;

    let mut run = RunConfig::new("eval", args);
    run.schedule = Some(model.schedule().clone());
    run.noise_spec = Some(model.noise_spec().clone());
    run.denoiser = Some(model.config().clone());
    run.plan = Some(settings.plan());
    write_run_record(&out, &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        out: PathBuf,
        report_hash: String,
        dice_avg: f64,
        recall: f64,
        f1: f64,
    }
    let summary = Summary {
        out: out.clone(),
        report_hash: report.hash(),
        dice_avg: report.dice_avg,
        recall: report.recall,
        f1: report.f1,
    };
    emit(
        json,
        &summary,
        format!(
            "{}/{} t_start={}: dice_avg {:.4}, recall {:.4}, f1 {:.4} (report hash {}) -> {}",
            report.method,
            report.noise,
            report.t_start,
            report.dice_avg,
            report.recall,
            report.f1,
            &summary.report_hash[..12],
            out.display()
        ),
    );
    Ok(())
}

#[derive(Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// One checkpoint per noise kind to compare; repeatable.
    #[arg(long, required = true)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "ddpm,thor")]
    pub methods: Vec<Method>,
    /// Starting noise levels to sweep (at least two).
    #[arg(long, value_delimiter = ',', required = true)]
    pub t_levels: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn cmd_ablate(args: &AblateArgs, json: bool) -> anyhow::Result<()> {
    let started = Instant::now();
    let (manifest, dir) = load_manifest(&args.manifest)?;
    let models: Vec<DenoiserModel> = args
        .checkpoint
        .iter()
        .map(|p| load_model(p))
        .collect::<anyhow::Result<_>>()?;
    let model_refs: Vec<&DenoiserModel> = models.iter().collect();
    let out = out_or_default(&args.out, "ablate");

    let reports = ablate(
        &dir,
        &manifest,
        &model_refs,
        &args.methods,
        &args.t_levels,
        args.seed,
        Some(&out),
    )?;
    let run = RunConfig::new("ablate", args);
    write_run_record(&out, &run, args.seed, started)?;

    #[derive(Serialize)]
    struct Summary {
        out: PathBuf,
        rows: usize,
    }
    let summary = Summary {
        out: out.clone(),
        rows: reports.len(),
    };
    emit(
        json,
        &summary,
        format!("{} ablation rows -> {}", summary.rows, out.display()),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args, cli.json),
        Command::Train(args) => cmd_train(args, cli.json),
        Command::Restore(args) => cmd_restore(args, cli.json),
        Command::Score(args) => cmd_score(args, cli.json),
        Command::Noise(args) => cmd_noise(args, cli.json),
        Command::Eval(args) => cmd_eval(args, cli.json),
        Command::Ablate(args) => cmd_ablate(args, cli.json),
    }
}
