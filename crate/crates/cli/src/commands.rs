use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use candle_core::Device;
use clap::{Args, Parser, Subcommand};
use outpaint::evaluation::{fid_report, write_grid, GridCell, RandomProjectionEmbedder};
use outpaint::layout_data::io::{read_label_map, read_rgb, write_label_map, write_rgb};
use outpaint::layout_data::{known_columns, mask_pixels, ImageSample, Split};
use outpaint::networks::Checkpoint;
use outpaint::pipeline::{outpaint, outpaint_cityscapes, Models, OutpaintRequest, OutpaintResult};
use outpaint::trainer::{trainer_meta, AblationMode, TrainSet, TrainStage, Trainer};
use outpaint::Error;
use serde_json::json;

use crate::config::RunConfig;
use crate::service::{serve, AppState};
use crate::store::SessionStore;
use crate::{image_hash, Result};

#[derive(Debug, Parser)]
#[command(name = "outpaint", version, about = "Layout-guided image outpainting")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, env = "OUTPAINT_CONFIG")]
    pub config: Option<PathBuf>,

    #[command(flatten)]
    pub overrides: Overrides,

    #[command(subcommand)]
    pub command: Command,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Dataset profile: desk, ade20k or cityscapes.
    #[arg(long, global = true, env = "OUTPAINT_PROFILE")]
    pub profile: Option<String>,
    /// Dataset manifest (tab-separated image, layout, split).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Layout generator checkpoint.
    #[arg(long, global = true, env = "OUTPAINT_STAGE1")]
    pub stage1: Option<PathBuf>,
    /// Image generator checkpoint.
    #[arg(long, global = true, env = "OUTPAINT_STAGE2")]
    pub stage2: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.profile {
            cfg.profile.clone_from(p);
        }
        if let Some(p) = &self.manifest {
            cfg.manifest.clone_from(p);
        }
        if let Some(p) = &self.checkpoint_dir {
            cfg.checkpoint_dir.clone_from(p);
        }
        if let Some(p) = &self.stage1 {
            cfg.stage1 = Some(p.clone());
        }
        if let Some(p) = &self.stage2 {
            cfg.stage2 = Some(p.clone());
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one stage (or an ablation) and write checkpoints.
    Train(TrainArgs),
    /// Outpaint a split and print a JSON FID report.
    Evaluate(EvaluateArgs),
    /// Extend one image to the right.
    Outpaint(OutpaintArgs),
    /// Write a comparison grid: masked input, true layout, predicted layout, output, ground truth.
    ExportGrid(GridArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// 1 trains the layout generator, 2 the image generator.
    #[arg(long)]
    pub stage: u8,
    /// full, noseg or segconcat.
    #[arg(long, default_value = "full")]
    pub ablation: AblationMode,
    /// Total steps; defaults to the configured number of epochs.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from the stage's latest checkpoint when it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "val")]
    pub split: Split,
    /// Fraction of the output width that is generated.
    #[arg(long, default_value_t = 0.25)]
    pub ratio: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OutpaintArgs {
    #[arg(long, default_value_t = 0.25)]
    pub ratio: f64,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Extended layout as a single-channel label PNG.
    #[arg(long)]
    pub layout_out: Option<PathBuf>,
    /// Write the layout in palette colours instead of class indices.
    #[arg(long)]
    pub color_layout: bool,
    /// Layout of the input, skipping the segmenter.
    #[arg(long)]
    pub layout_in: Option<PathBuf>,
    /// Segmenter lookup key; the input's file stem by default.
    #[arg(long)]
    pub source_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long, default_value = "val")]
    pub split: Split,
    #[arg(long, default_value_t = 0.25)]
    pub ratio: f64,
    /// Number of rows.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 64)]
    pub tile: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "OUTPAINT_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Session store file.
    #[arg(long, env = "OUTPAINT_DB", default_value = "outpaint-sessions.redb")]
    pub db: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cli.overrides.apply(&mut cfg);
    cfg.profile()?;
    match cli.command {
        Command::Train(a) => train(&cfg, &a),
        Command::Evaluate(a) => evaluate(&cfg, &a),
        Command::Outpaint(a) => outpaint_one(&cfg, &a),
        Command::ExportGrid(a) => export_grid(&cfg, &a),
        Command::Serve(a) => serve_blocking(&cfg, &a),
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value"));
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let profile = cfg.profile()?;
    let train_cfg = cfg.train_config()?;
    let stage = TrainStage::resolve(args.stage, args.ablation)?;
    let data = TrainSet::new(cfg.manifest()?.load_samples(Split::Train, &profile)?)?;
    let device = Device::Cpu;
    let dir = &cfg.checkpoint_dir;
    std::fs::create_dir_all(dir)?;

    let mut trainer = Trainer::new(stage, train_cfg, profile.num_classes, profile.width_divisor, &device)?;
    let latest = trainer.checkpoint_path(dir, None);
    if args.resume && latest.exists() {
        let ck = Checkpoint::load(&latest, &device)?;
        let meta = trainer_meta(&ck)?;
        if meta.stage != stage || meta.num_classes != profile.num_classes {
            return Err(Error::CheckpointMismatch {
                expected: format!("{stage:?} with {} classes", profile.num_classes),
                found: format!("{:?} with {} classes", meta.stage, meta.num_classes),
            }
            .into());
        }
        trainer = Trainer::resume(&ck, &device)?;
    }

    let cfg_t = trainer.config();
    let total = args
        .steps
        .unwrap_or(u64::from(cfg_t.epochs) * data.steps_per_epoch(cfg_t.batch_size) as u64);
    let remaining = total.saturating_sub(trainer.steps_done());
    let stage_name = latest
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix("_latest.safetensors"))
        .unwrap_or("train")
        .to_string();
    let log_path = dir.join(format!("{stage_name}_log.jsonl"));
    let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
    let records = trainer.run(&data, remaining, &mut BufWriter::new(log), Some(dir))?;
    print_json(&json!({
        "stage": stage,
        "steps": trainer.steps_done(),
        "checkpoint": latest,
        "log": log_path,
        "last": records.last(),
    }));
    Ok(())
}

/// Left crop of `sample` with its true layout, outpainted back to full width.
fn outpaint_sample(sample: &ImageSample, ratio: f64, models: &Models) -> Result<OutpaintResult> {
    let (h, w) = (sample.height(), sample.width());
    let wk = known_columns(w, ratio);
    let mut request = OutpaintRequest::new(sample.source_id.clone(), sample.pixels.crop(0, 0, h, wk)?, ratio);
    request.layout = Some(sample.layout.crop(0, 0, h, wk)?);
    let result = outpaint(&request, models)?;
    if (result.image.height(), result.image.width()) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "ratio {ratio} turns a {h}x{w} image into a {}x{} canvas",
            result.image.height(),
            result.image.width()
        ))
        .into());
    }
    Ok(result)
}

fn split_samples(cfg: &RunConfig, split: Split) -> Result<Vec<ImageSample>> {
    let samples = cfg.manifest()?.load_samples(split, &cfg.profile()?)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("split '{split}' has no samples")).into());
    }
    Ok(samples)
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let models = cfg.models(&Device::Cpu)?;
    let samples = split_samples(cfg, args.split)?;
    let mut generated = Vec::with_capacity(samples.len());
    for s in &samples {
        generated.push(outpaint_sample(s, args.ratio, &models)?.image);
    }
    let real: Vec<_> = samples.into_iter().map(|s| s.pixels).collect();
    let embedder = RandomProjectionEmbedder::standard(cfg.eval_seed);
    let report = fid_report(&models.profile.name, args.ratio, &real, &generated, &embedder)?;
    let value = serde_json::to_value(&report).map_err(Error::from)?;
    if let Some(out) = &args.out {
        std::fs::write(out, serde_json::to_vec_pretty(&value).map_err(Error::from)?)?;
    }
    print_json(&value);
    Ok(())
}

pub fn outpaint_one(cfg: &RunConfig, args: &OutpaintArgs) -> Result<()> {
    let models = cfg.models(&Device::Cpu)?;
    let pixels = read_rgb(&args.input)?;
    let source_id = args.source_id.clone().unwrap_or_else(|| stem(&args.input));
    let (h, w) = (pixels.height(), pixels.width());
    let result = if models.profile.split_halves && w == 2 * h && args.layout_in.is_none() {
        outpaint_cityscapes(&pixels, &source_id, args.ratio, &models)?
    } else {
        let mut request = OutpaintRequest::new(source_id, pixels, args.ratio);
        if let Some(p) = &args.layout_in {
            request.layout = Some(read_label_map(p, models.profile.num_classes)?);
        }
        outpaint(&request, &models)?
    };
    write_rgb(&args.out, &result.image)?;
    if let Some(p) = &args.layout_out {
        if args.color_layout {
            models.profile.palette().colorize(&result.layout)?.save(p).map_err(Error::from)?;
        } else {
            write_label_map(p, &result.layout)?;
        }
    }
    print_json(&json!({
        "image": args.out,
        "layout": args.layout_out,
        "height": result.image.height(),
        "width": result.image.width(),
        "image_hash": image_hash(&result.image),
        "out_of_distribution": result.out_of_distribution,
        "timing_ms": result.timing,
    }));
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn export_grid(cfg: &RunConfig, args: &GridArgs) -> Result<()> {
    let models = cfg.models(&Device::Cpu)?;
    let samples = split_samples(cfg, args.split)?;
    let mut rows = Vec::new();
    for s in samples.iter().take(args.count) {
        let r = outpaint_sample(s, args.ratio, &models)?;
        rows.push(vec![
            GridCell::Image(mask_pixels(&s.pixels, &r.mask)?),
            GridCell::Layout(s.layout.clone()),
            GridCell::Layout(r.layout),
            GridCell::Image(r.image),
            GridCell::Image(s.pixels.clone()),
        ]);
    }
    write_grid(&args.out, &rows, args.tile, &models.profile.palette())?;
    print_json(&json!({ "grid": args.out, "rows": rows.len() }));
    Ok(())
}

pub fn serve_blocking(cfg: &RunConfig, args: &ServeArgs) -> Result<()> {
    let models = Arc::new(cfg.models(&Device::Cpu)?);
    let store = Arc::new(SessionStore::open(&args.db)?);
    let state = Arc::new(AppState::new(models, store));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        serve(listener, state).await
    })?;
    Ok(())
}
