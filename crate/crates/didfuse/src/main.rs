//! Thin command-line front end over the `didfuse` library. Each subcommand
//! maps 1:1 onto a `pipeline` function; all logic lives in the library.

use clap::{Args, Parser, Subcommand, ValueEnum};
use didfuse::fusion::{FusionConfig, SamStrategy};
use didfuse::io::{build_manifest, load_checkpoint, read_manifest_file, PairManifest, Split};
use didfuse::loss::{LossConfig, LossVariant, Reduction};
use didfuse::network::{ArchVariant, SkipMode};
use didfuse::pipeline::{
    self, AblationVariant, FusionSkip, TrainConfig,
};
use didfuse::Result;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "didfuse", version, about = "Dual-stream auto-encoder for infrared/visible image fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliVariant {
    Full,
    NoBase,
    NoDetail,
    NoDecomp,
    ClassicAe,
    NoSkip,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliSkipMode {
    Add,
    Concat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliSam {
    L1,
    Saliency,
    Average,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliFusionSkip {
    Avg,
    Ir,
    Vis,
    FusedSam,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliReduction {
    Sum,
    Mean,
}

/// Dataset selection shared by the training-style commands.
#[derive(Args)]
struct DataArgs {
    /// Directory of infrared training images
    #[arg(long)]
    ir_dir: Option<PathBuf>,
    /// Directory of visible training images
    #[arg(long)]
    vis_dir: Option<PathBuf>,
    /// Explicit manifest file (id<TAB>ir_path<TAB>vis_path); overrides the
    /// stem-pairing of --ir-dir/--vis-dir
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl DataArgs {
    fn resolve(&self, split: Split) -> Result<PairManifest> {
        if let Some(path) = &self.manifest {
            return read_manifest_file(path, split);
        }
        match (&self.ir_dir, &self.vis_dir) {
            (Some(ir), Some(vis)) => {
                let (m, warnings) = build_manifest(ir, vis, split)?;
                for w in warnings {
                    eprintln!("warning: {w}");
                }
                Ok(m)
            }
            _ => Err(didfuse::Error::invalid(
                "provide either --manifest or both --ir-dir and --vis-dir".to_string(),
            )),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 120)]
    epochs: usize,
    #[arg(long, default_value_t = 24)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    crop: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Loss/architecture variant
    #[arg(long, value_enum, default_value_t = CliVariant::Full)]
    variant: CliVariant,
    #[arg(long, value_enum, default_value_t = CliSkipMode::Add)]
    skip_mode: CliSkipMode,
    /// Loss reduction: `sum` mirrors the published objective; `mean` is the
    /// scale-invariant form recommended for small widths/crops
    #[arg(long, value_enum, default_value_t = CliReduction::Sum)]
    reduction: CliReduction,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    /// Output checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch loss CSV
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let (arch, loss_variant) = match self.variant {
            CliVariant::Full => (ArchVariant::Full, LossVariant::Full),
            CliVariant::NoBase => AblationVariant::NoBase.arch_and_loss(),
            CliVariant::NoDetail => AblationVariant::NoDetail.arch_and_loss(),
            CliVariant::NoDecomp => AblationVariant::NoDecomp.arch_and_loss(),
            CliVariant::ClassicAe => AblationVariant::ClassicAe.arch_and_loss(),
            CliVariant::NoSkip => AblationVariant::NoSkip.arch_and_loss(),
        };
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            lr: self.lr,
            width: self.width,
            crop: self.crop,
            seed: self.seed,
            arch,
            skip_mode: match self.skip_mode {
                CliSkipMode::Add => SkipMode::Add,
                CliSkipMode::Concat => SkipMode::Concat,
            },
            loss: LossConfig {
                variant: loss_variant,
                reduction: match self.reduction {
                    CliReduction::Sum => Reduction::Sum,
                    CliReduction::Mean => Reduction::Mean,
                },
                ..LossConfig::default()
            },
        }
    }
}

#[derive(Args)]
struct FusionArgs {
    /// Spatial attention strategy
    #[arg(long, value_enum, default_value_t = CliSam::Saliency)]
    sam: CliSam,
    /// Disable the channel attention module
    #[arg(long)]
    no_cam: bool,
    /// Fixed weights g1,g2,g3,g4 (g1+g2 = g3+g4 = 1)
    #[arg(long, value_delimiter = ',', num_args = 4)]
    gamma: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    gf_radius: usize,
    #[arg(long, default_value_t = 0.01)]
    gf_eps: f64,
    /// Skip activations fed to the decoder
    #[arg(long, value_enum, default_value_t = CliFusionSkip::Avg)]
    fusion_skip: CliFusionSkip,
}

impl FusionArgs {
    fn config(&self) -> FusionConfig {
        let mut cfg = FusionConfig {
            sam: match self.sam {
                CliSam::L1 => SamStrategy::L1Attention,
                CliSam::Saliency => SamStrategy::Saliency,
                CliSam::Average => SamStrategy::WeightedAverage,
            },
            use_cam: !self.no_cam,
            gf_radius: self.gf_radius,
            gf_eps: self.gf_eps,
            ..FusionConfig::default()
        };
        if let Some(g) = &self.gamma {
            cfg.gammas = [g[0], g[1], g[2], g[3]];
        }
        cfg
    }

    fn skip(&self) -> FusionSkip {
        match self.fusion_skip {
            CliFusionSkip::Avg => FusionSkip::Avg,
            CliFusionSkip::Ir => FusionSkip::Ir,
            CliFusionSkip::Vis => FusionSkip::Vis,
            CliFusionSkip::FusedSam => FusionSkip::FusedSam,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on registered infrared/visible pairs
    Train(TrainArgs),
    /// Fuse one infrared/visible pair with a trained model
    Fuse {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        ir: PathBuf,
        #[arg(long)]
        vis: PathBuf,
        #[command(flatten)]
        fusion: FusionArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the base/detail decomposition of one image
    Decompose {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score fused images against their sources
    Eval {
        #[arg(long)]
        fused_dir: PathBuf,
        #[arg(long)]
        ir_dir: PathBuf,
        #[arg(long)]
        vis_dir: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Train and evaluate one ablation variant
    Ablate {
        #[arg(long, value_enum)]
        variant: CliAblation,
        #[command(flatten)]
        train: TrainArgs,
        /// Held-out pairs for evaluation (defaults to the training pairs)
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Repeat training with consecutive seeds and report metric dispersion
    Repro {
        #[arg(long)]
        runs: usize,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        eval_manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fuse+evaluate a validation set under all six merging strategies
    CompareStrategies {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        val_manifest: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Work directory for the per-strategy fused images
        #[arg(long, default_value = "compare-strategies-out")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CliAblation {
    NoBase,
    NoDetail,
    NoDecomp,
    ClassicAe,
    NoSkip,
}

impl From<CliAblation> for AblationVariant {
    fn from(v: CliAblation) -> Self {
        match v {
            CliAblation::NoBase => AblationVariant::NoBase,
            CliAblation::NoDetail => AblationVariant::NoDetail,
            CliAblation::NoDecomp => AblationVariant::NoDecomp,
            CliAblation::ClassicAe => AblationVariant::ClassicAe,
            CliAblation::NoSkip => AblationVariant::NoSkip,
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let manifest = args.data.resolve(Split::Train)?;
            let cfg = args.config();
            match args.precision {
                Precision::F32 => {
                    let (_, rec) =
                        pipeline::train::<f32>(&manifest, &cfg, &args.out, args.loss_csv.as_deref())?;
                    report_training(&rec);
                }
                Precision::F64 => {
                    let (_, rec) =
                        pipeline::train::<f64>(&manifest, &cfg, &args.out, args.loss_csv.as_deref())?;
                    report_training(&rec);
                }
            }
        }
        Command::Fuse { ckpt, ir, vis, fusion, out } => {
            let mut model = load_checkpoint::<f32>(&ckpt)?;
            pipeline::fuse_to_file(&mut model.net, &ir, &vis, &fusion.config(), fusion.skip(), &out)?;
            println!("wrote {}", out.display());
        }
        Command::Decompose { ckpt, image, out_dir } => {
            let mut model = load_checkpoint::<f32>(&ckpt)?;
            let img = didfuse::io::load_grayscale(&image, didfuse::io::SourceKind::Visible)?;
            let files = pipeline::decompose_to_files(&mut model.net, &img, &out_dir)?;
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Eval { fused_dir, ir_dir, vis_dir, csv } => {
            let (manifest, warnings) = build_manifest(&ir_dir, &vis_dir, Split::Test)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            let (reports, mean) = pipeline::evaluate_dir(&fused_dir, &manifest, Some(&csv))?;
            println!("{} pairs scored; mean row: {}", reports.len(), mean.csv_row());
        }
        Command::Ablate { variant, train, eval_manifest, out_dir } => {
            let train_m = train.data.resolve(Split::Train)?;
            let eval_m = match &eval_manifest {
                Some(p) => read_manifest_file(p, Split::Test)?,
                None => train_m.clone(),
            };
            let cfg = train.config();
            let fcfg = FusionConfig::default();
            let (rec, _, mean) = pipeline::ablate::<f32>(
                &train_m,
                &eval_m,
                variant.into(),
                &cfg,
                &fcfg,
                &out_dir,
            )?;
            report_training(&rec);
            println!("eval mean: {}", mean.csv_row());
        }
        Command::Repro { runs, train, eval_manifest, out_dir } => {
            let train_m = train.data.resolve(Split::Train)?;
            let eval_m = match &eval_manifest {
                Some(p) => read_manifest_file(p, Split::Test)?,
                None => train_m.clone(),
            };
            let cfg = train.config();
            let summary = pipeline::repro::<f32>(
                &train_m,
                &eval_m,
                runs,
                &cfg,
                &FusionConfig::default(),
                &out_dir,
            )?;
            println!("{} runs complete; dispersion (metric mean std cv):", runs);
            for row in &summary.dispersion {
                println!("  {} {:.6} {:.6} {:.6}", row.metric, row.mean, row.std, row.cv);
            }
        }
        Command::CompareStrategies { ckpt, val_manifest, csv, out_dir } => {
            let mut model = load_checkpoint::<f32>(&ckpt)?;
            let manifest = read_manifest_file(&val_manifest, Split::Val)?;
            let rows =
                pipeline::compare_strategies(&mut model.net, &manifest, &out_dir, &csv)?;
            for (name, m) in &rows {
                println!("{name}: {}", m.csv_row());
            }
        }
    }
    Ok(())
}

fn report_training(rec: &didfuse::pipeline::RunRecord) {
    if let (Some(first), Some(last)) = (rec.per_epoch.first(), rec.per_epoch.last()) {
        println!(
            "trained {} epochs in {:.1}s (seed {}): total loss {:.6} -> {:.6}",
            rec.per_epoch.len(),
            rec.wall_clock_secs,
            rec.seed,
            first.total,
            last.total
        );
    }
    println!("checkpoint: {}", rec.checkpoint_path.display());
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
