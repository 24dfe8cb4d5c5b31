//! Command-line front end for the benchmark pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lesionbench::error::Result;
use lesionbench::harness::{
    parse_blocks, parse_methods, resolve_config, run_experiment, stage_evaluate, stage_explain,
    stage_generate, stage_report, stage_train, BackgroundChoice, EvalSelection, Overrides, Scale,
};
use lesionbench::saliency::MethodKind;
use lesionbench::xmetrics::Transform;

/// Synthetic-lesion benchmark for saliency methods: generate data, train
/// a classifier, explain predictions, and score the heatmaps against the
/// known ground truth.
///
/// Settings resolve in three layers: the --scale preset, then the config
/// file, then these flags. Every config-file key has a flag twin
/// ([generate] train/val/holdout map to --train-size/--val-size/
/// --holdout-size; all other keys keep their names).
#[derive(Parser)]
#[command(name = "lesionbench", version, max_term_width = 100)]
struct Cli {
    /// Declarative config file (flat key = value lines with [experiment],
    /// [generate], [train], [explain], [evaluate], [report] sections)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; every dataset, initialization, and shuffle derives
    /// from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Scale preset: `paper` (140x192, 42k/6k/12k, 4 blocks, 3 runs) or
    /// `desk` (64x64, 2k/500/1k, 2 blocks, 1 run)
    #[arg(long, global = true, value_parser = Scale::parse)]
    scale: Option<Scale>,

    /// Output directory for all pipeline artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated method list (or `all`): gradient, lrp_z,
    /// lrp_alpha_beta, deep_taylor, guided_backprop, deconvnet,
    /// pattern_net, pattern_attribution
    #[arg(long, global = true, value_parser = parse_methods_arg)]
    methods: Option<MethodsArg>,

    /// Score transform applied to heatmaps before scoring: abs, raw, pos
    #[arg(long, global = true, value_parser = Transform::parse)]
    transform: Option<Transform>,

    /// Background condition(s): perlin, file, or both
    #[arg(long, global = true, value_parser = BackgroundChoice::parse)]
    background: Option<BackgroundChoice>,

    /// Directory of grayscale PNG backgrounds with *_mask.png partners
    /// (required for file-backed conditions)
    #[arg(long, global = true)]
    archive: Option<PathBuf>,

    /// Raster height in pixels
    #[arg(long, global = true)]
    image_height: Option<usize>,

    /// Raster width in pixels
    #[arg(long, global = true)]
    image_width: Option<usize>,

    /// Training split size (config key: [generate] train)
    #[arg(long, global = true)]
    train_size: Option<usize>,

    /// Validation split size (config key: [generate] val)
    #[arg(long, global = true)]
    val_size: Option<usize>,

    /// Holdout split size (config key: [generate] holdout)
    #[arg(long, global = true)]
    holdout_size: Option<usize>,

    /// Perlin lattice rows
    #[arg(long, global = true)]
    perlin_rows: Option<usize>,

    /// Perlin lattice columns
    #[arg(long, global = true)]
    perlin_cols: Option<usize>,

    /// Lesion diameter in pixels
    #[arg(long, global = true)]
    lesion_diameter: Option<f64>,

    /// Peak multiplicative attenuation in (0,1)
    #[arg(long, global = true)]
    lesion_intensity: Option<f64>,

    /// Lesions per positive sample
    #[arg(long, global = true)]
    lesion_count: Option<usize>,

    /// SGD learning rate
    #[arg(long, global = true)]
    learning_rate: Option<f32>,

    /// Momentum coefficient
    #[arg(long, global = true)]
    momentum: Option<f32>,

    /// Training batch size (shuffled)
    #[arg(long, global = true)]
    batch_size: Option<usize>,

    /// Evaluation batch size (unshuffled)
    #[arg(long, global = true)]
    eval_batch_size: Option<usize>,

    /// Epoch cap
    #[arg(long, global = true)]
    max_epochs: Option<usize>,

    /// Stop when epoch-mean training loss falls below this
    #[arg(long, global = true)]
    loss_stop: Option<f64>,

    /// Early-stopping patience in epochs
    #[arg(long, global = true)]
    patience: Option<usize>,

    /// Minimum validation-loss improvement that resets patience
    #[arg(long, global = true)]
    min_delta: Option<f64>,

    /// Independent training runs per dataset (best kept by holdout
    /// accuracy)
    #[arg(long, global = true)]
    runs: Option<usize>,

    /// Comma-separated conv filter counts, one per block (e.g. 32,64)
    #[arg(long, global = true, value_parser = parse_blocks_arg)]
    blocks: Option<BlocksArg>,

    /// Width of the penultimate dense layer
    #[arg(long, global = true)]
    dense_units: Option<usize>,

    /// Class-2 holdout samples to explain and score
    #[arg(long, global = true)]
    eval_count: Option<usize>,

    /// Alpha for the LRP alpha-beta rule
    #[arg(long, global = true)]
    alpha: Option<f32>,

    /// Beta for the LRP alpha-beta rule
    #[arg(long, global = true)]
    beta: Option<f32>,

    /// Denominator stabilizer for relevance rules
    #[arg(long, global = true)]
    epsilon: Option<f32>,

    /// Evaluation sample selection: first (stored order) or random
    /// (seed-controlled)
    #[arg(long, global = true, value_parser = EvalSelection::parse)]
    selection: Option<EvalSelection>,

    /// Restrict scoring to pixels inside the brain mask
    #[arg(long, global = true)]
    mask_restricted: Option<bool>,

    /// Render figures/montage.png
    #[arg(long, global = true)]
    montage: Option<bool>,

    /// Render figures/boxplots.svg
    #[arg(long, global = true)]
    boxplots: Option<bool>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug)]
struct MethodsArg(Vec<MethodKind>);

fn parse_methods_arg(s: &str) -> Result<MethodsArg> {
    parse_methods(s).map(MethodsArg)
}

#[derive(Clone, Debug)]
struct BlocksArg(Vec<usize>);

fn parse_blocks_arg(s: &str) -> Result<BlocksArg> {
    parse_blocks(s).map(BlocksArg)
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset(s): manifest plus TEN1 tensors per split
    Generate,
    /// Train the classifier run(s) and select the best on holdout accuracy
    Train,
    /// Produce heatmaps for the evaluation samples with every method
    Explain,
    /// Score heatmaps against ground truth into metrics.csv / summary.csv
    Evaluate,
    /// Write report.json and render figures
    Report,
    /// Run every stage in order
    RunAll,
}

impl Cli {
    fn to_overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            scale: self.scale,
            out: self.out.clone(),
            background: self.background,
            archive: self.archive.clone(),
            image_height: self.image_height,
            image_width: self.image_width,
            train_size: self.train_size,
            val_size: self.val_size,
            holdout_size: self.holdout_size,
            perlin_rows: self.perlin_rows,
            perlin_cols: self.perlin_cols,
            lesion_diameter: self.lesion_diameter,
            lesion_intensity: self.lesion_intensity,
            lesion_count: self.lesion_count,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            eval_batch_size: self.eval_batch_size,
            max_epochs: self.max_epochs,
            loss_stop: self.loss_stop,
            patience: self.patience,
            min_delta: self.min_delta,
            runs: self.runs,
            blocks: self.blocks.clone().map(|b| b.0),
            dense_units: self.dense_units,
            methods: self.methods.clone().map(|m| m.0),
            eval_count: self.eval_count,
            alpha: self.alpha,
            beta: self.beta,
            epsilon: self.epsilon,
            selection: self.selection,
            transform: self.transform,
            mask_restricted: self.mask_restricted,
            montage: self.montage,
            boxplots: self.boxplots,
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut overrides = Overrides::default();
    if let Some(path) = &cli.config {
        overrides = Overrides::from_config_file(path)?;
    }
    let overrides = overrides.merged_with(cli.to_overrides());
    let cfg = resolve_config(&overrides)?;
    match cli.command {
        Command::Generate => {
            stage_generate(&cfg)?;
        }
        Command::Train => {
            stage_train(&cfg)?;
        }
        Command::Explain => {
            stage_explain(&cfg)?;
        }
        Command::Evaluate => {
            stage_evaluate(&cfg)?;
        }
        Command::Report => {
            stage_report(&cfg)?;
        }
        Command::RunAll => {
            run_experiment(&cfg)?;
        }
    }
    eprintln!("ok: {}", cfg.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
