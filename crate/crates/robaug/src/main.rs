//! Command-line front end. Each subcommand is a thin shell around the
//! library entry point of the same name; flag values are parsed with
//! the library's own parsers so scripting and programmatic use agree.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robaug::aug::{AugConfig, AugMethod, BackgroundScope, GenBackendDescriptor, Resample};
use robaug::dataset::load_dataset;
use robaug::engine::{bench, eval_seg, scale_plan, Engine, EngineConfig};
use robaug::metrics::{normalize_table, read_score_csv_file, render_score_table};
use robaug::seg::BackendDescriptor;
use robaug::{Error, Result};

#[derive(Parser)]
#[command(
    name = "robaug",
    version,
    about = "Background augmentation for robot demonstration datasets"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Augment every episode of a dataset into a new output tree.
    Augment(AugmentArgs),
    /// Score a segmentation backend against an annotated image set.
    EvalSeg(EvalSegArgs),
    /// Normalize a raw behavior-score table.
    Score(ScoreArgs),
    /// Plan a dataset-scaling experiment.
    ScalePlan(ScalePlanArgs),
    /// Measure per-frame augmentation cost on a dataset.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Augmentation method: engine|background|imagenet|texture|inpainting|none.
    /// bench accepts a comma-separated list.
    #[arg(long = "aug-method")]
    aug_method: String,

    /// Robot segmentation backend: external:URI|passthrough[:DIR]|chroma[:RRGGBB].
    #[arg(long = "robo-seg", default_value = "chroma")]
    robo_seg: String,

    /// Object segmentation backend: external:URI|passthrough[:DIR]|chroma[:RRGGBB].
    #[arg(long = "obj-seg", default_value = "chroma")]
    obj_seg: String,

    /// Background generator: procedural|external:URI.
    #[arg(long = "gen-backend", default_value = "procedural")]
    gen_backend: String,

    /// Region-proposal backend for inpainting: external:URI|passthrough:DIR.
    #[arg(long)]
    proposals: Option<String>,

    /// Frames per segmentation request.
    #[arg(long = "batch-size", default_value_t = 1)]
    batch_size: usize,

    /// Base seed; all per-frame randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Text file with one scene description per line.
    #[arg(long = "prompt-pool")]
    prompt_pool: Option<PathBuf>,

    /// Directory of texture or photo assets.
    #[arg(long = "asset-pool")]
    asset_pool: Option<PathBuf>,

    /// Background reuse: per-frame|per-episode.
    #[arg(long = "background-scope", default_value = "per-frame")]
    background_scope: String,

    /// Foreground dilation radius in pixels.
    #[arg(long, default_value_t = 0)]
    dilate: u32,

    /// Foreground feather radius in pixels (0 = hard edge).
    #[arg(long, default_value_t = 0)]
    feather: u32,

    /// Regions to regenerate per frame (inpainting).
    #[arg(long = "inpaint-count", default_value_t = 5)]
    inpaint_count: usize,

    /// Max fraction of a proposal that may overlap the foreground.
    #[arg(long = "irrelevance-threshold", default_value_t = 0.05)]
    irrelevance_threshold: f64,

    /// Asset scaling filter: nearest|bilinear.
    #[arg(long, default_value = "bilinear")]
    resample: String,
}

impl PipelineArgs {
    fn engine_config(&self, method: AugMethod, output: Option<PathBuf>) -> Result<EngineConfig> {
        let mut aug = AugConfig::new(method);
        aug.seed = self.seed;
        aug.background_scope = self.background_scope.parse::<BackgroundScope>()?;
        aug.dilate_radius = self.dilate;
        aug.feather_radius = self.feather;
        aug.inpaint_count = self.inpaint_count;
        aug.irrelevance_threshold = self.irrelevance_threshold;
        aug.resample = self.resample.parse::<Resample>()?;
        aug.backends.gen = GenBackendDescriptor::parse(&self.gen_backend)?;
        aug.backends.proposals = self
            .proposals
            .as_deref()
            .map(BackendDescriptor::parse)
            .transpose()?;

        let mut cfg = EngineConfig::new(
            BackendDescriptor::parse(&self.robo_seg)?,
            BackendDescriptor::parse(&self.obj_seg)?,
            aug,
        );
        cfg.batch_size = self.batch_size;
        cfg.prompt_pool = self.prompt_pool.clone();
        cfg.asset_pool = self.asset_pool.clone();
        cfg.output = output;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Source dataset root.
    #[arg(long)]
    input: PathBuf,

    /// Output dataset root (episodes are staged, then renamed in).
    #[arg(long)]
    output: PathBuf,

    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvalSegArgs {
    /// Backend under test: external:URI|passthrough[:DIR]|chroma[:RRGGBB].
    /// Bare `passthrough` serves the evaluation set's own masks.
    #[arg(long)]
    backend: String,

    /// Annotated image set root.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    /// Raw score CSV: method,task,stage,scene,raw_mean,max.
    #[arg(long)]
    raw: PathBuf,

    /// Emit only the JSON report.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ScalePlanArgs {
    /// Number of source demonstrations.
    #[arg(long)]
    demos: u64,

    /// Dataset size multiplier.
    #[arg(long)]
    factor: u64,

    /// Keep the originals as copy 0 and augment the rest.
    #[arg(long)]
    mix: bool,

    /// Base seed for per-copy seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset root to time against (at least 10 frames).
    #[arg(long)]
    input: PathBuf,

    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::schema(format!("report serialization: {e}")))?;
    bytes.push(b'\n');
    use std::io::Write;
    std::io::stdout()
        .write_all(&bytes)
        .map_err(|e| Error::io("stdout", e))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Augment(args) => {
            let method: AugMethod = args.pipeline.aug_method.parse()?;
            let cfg = args.pipeline.engine_config(method, Some(args.output.clone()))?;
            let ds = load_dataset(&args.input)?;
            let engine = Engine::new(cfg)?;
            let out = engine.augment_dataset(&ds)?;
            println!(
                "augmented {} episodes into {}",
                out.len(),
                args.output.display()
            );
            Ok(())
        }
        Cmd::EvalSeg(args) => {
            let desc = BackendDescriptor::parse(&args.backend)?;
            let report = eval_seg(&desc, &args.data)?;
            print_json(&report)
        }
        Cmd::Score(args) => {
            let raw = read_score_csv_file(&args.raw)?;
            let report = normalize_table(&raw)?;
            if !args.json {
                print!("{}", render_score_table(&report));
            }
            print_json(&report)
        }
        Cmd::ScalePlan(args) => {
            let plan = scale_plan(args.demos, args.factor, args.mix, args.seed)?;
            print_json(&plan)
        }
        Cmd::Bench(args) => {
            // A comma-separated method list times several strategies on
            // the same fixture in one run.
            let methods = args
                .pipeline
                .aug_method
                .split(',')
                .map(|s| s.trim().parse::<AugMethod>())
                .collect::<Result<Vec<_>>>()?;
            let cfg = args.pipeline.engine_config(methods[0], None)?;
            let ds = load_dataset(&args.input)?;
            let report = bench(&cfg, &ds, &methods)?;
            print_json(&report)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
