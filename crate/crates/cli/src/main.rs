mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpnn::{CpnnError, ErrorClass};

/// Cell-type prototype-informed expression prediction from patch features.
///
/// Typical order: synth (optional) → fit-prototypes → deconvolve →
/// train-slide or train-patch → predict / export-weights → evaluate.
#[derive(Parser, Debug)]
#[command(
    name = "cpnn",
    version,
    about,
    long_about,
    arg_required_else_help = true
)]
struct Cli {
    /// Worker threads for slide- and sample-parallel stages [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with known ground truth
    Synth(SynthArgs),
    /// Fit batch-corrected cell-type prototypes from single-cell counts
    FitPrototypes(FitArgs),
    /// Estimate per-slide cell-type proportions from bulk counts
    Deconvolve(DeconvArgs),
    /// Cross-validated training against slide-level (bulk) counts
    TrainSlide(TrainSlideArgs),
    /// Cross-validated training against spot-level counts (leave-one-slide-out by default)
    TrainPatch(TrainPatchArgs),
    /// Predict expression from a checkpoint
    Predict(PredictArgs),
    /// Per-gene (or per-sample) Pearson and Spearman correlations
    Evaluate(EvaluateArgs),
    /// Finite-difference check of the training objectives
    Gradcheck(GradcheckArgs),
    /// Write the mean patch weights of every slide
    ExportWeights(ExportArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON file with generator settings; missing fields take defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Matrix Market count file (cells × genes)
    #[arg(long)]
    sc: PathBuf,
    /// Cell ids, one per line [default: <sc stem>_rows.txt]
    #[arg(long)]
    rows: Option<PathBuf>,
    /// Gene ids, one per line [default: <sc stem>_genes.txt]
    #[arg(long)]
    genes: Option<PathBuf>,
    /// CSV `cell_id,cell_type,batch`
    #[arg(long)]
    annotations: PathBuf,
    /// Output directory for prototypes.csv, raw_prototypes.csv and prototype_fit.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
}

#[derive(Args, Debug)]
struct DeconvArgs {
    /// Dense count CSV, one row per slide
    #[arg(long)]
    bulk: PathBuf,
    /// Normalised prototype CSV
    #[arg(long)]
    prototypes: PathBuf,
    /// Prototype fit sidecar holding θ^sc [default: prototype_fit.json next to --prototypes]
    #[arg(long)]
    fit: Option<PathBuf>,
    /// Use this dispersion for every gene instead of the single-cell estimate
    #[arg(long)]
    fixed_theta: Option<f64>,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    /// Output CSV `slide_id,<cell types>`
    #[arg(long)]
    out: PathBuf,
}

/// Settings shared by both training modes. Flags override `--config`.
#[derive(Args, Debug)]
struct TrainOptions {
    /// Seed for initialisation, shuffling, fold and validation choice (required)
    #[arg(long)]
    seed: u64,
    /// JSON file with TrainConfig fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Normalised prototype CSV (T̄⁰)
    #[arg(long)]
    prototypes: PathBuf,
    /// Directory of per-slide feature CSVs
    #[arg(long)]
    features: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Fold file `slide_id,fold[,patient]` [default: seeded random split]
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Validation slide list (`slide_id` column)
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Regularization weight (λ for slides, the prototype anchor weight for patches)
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    validation_count: Option<usize>,
    /// Hidden width of the weight head [default: feature dimension]
    #[arg(long)]
    hidden: Option<usize>,
    /// Drop the GELU between the two head layers
    #[arg(long)]
    no_activation: bool,
    /// Ablation: random prototype initialisation
    #[arg(long)]
    no_prototype_init: bool,
    /// Ablation: α ≡ 1, β ≡ 0
    #[arg(long)]
    no_modality_correction: bool,
    /// Ablation: keep the prototype fixed
    #[arg(long)]
    freeze_prototype: bool,
    /// Ablation: drop the regularizer
    #[arg(long)]
    no_regularize: bool,
    /// Count the regularizer in the early-stopping loss
    #[arg(long)]
    val_includes_reg: bool,
    /// Correlate log1p values when reporting held-out metrics
    #[arg(long)]
    eval_log1p: bool,
    /// Omit the creation time from checkpoints
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args, Debug)]
struct TrainSlideArgs {
    #[command(flatten)]
    common: TrainOptions,
    /// Dense count CSV, one row per slide
    #[arg(long)]
    bulk: PathBuf,
    /// Reference proportions from `deconvolve`
    #[arg(long)]
    wref: PathBuf,
}

#[derive(Args, Debug)]
struct TrainPatchArgs {
    #[command(flatten)]
    common: TrainOptions,
    /// Directory of per-slide spot count CSVs, rows keyed by patch id
    #[arg(long)]
    spots: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of per-slide feature CSVs
    #[arg(long)]
    features: PathBuf,
    /// Take each slide's library size from the row totals of this count CSV
    #[arg(long, conflicts_with = "library")]
    bulk: Option<PathBuf>,
    /// Library size used for every slide
    #[arg(long)]
    library: Option<f64>,
    /// Write per-patch predictions (one CSV per slide in --out) instead of slide totals
    #[arg(long)]
    patch: bool,
    /// Output CSV, or a directory with --patch
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AxisArg {
    PerGene,
    PerSample,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Prediction CSV (row ids and gene columns)
    #[arg(long)]
    pred: PathBuf,
    /// Observed counts with matching row ids; extra rows and genes are ignored
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = AxisArg::PerGene)]
    axis: AxisArg,
    #[arg(long)]
    log1p: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GradcheckMode {
    Slide,
    Patch,
    Both,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = GradcheckMode::Both)]
    mode: GradcheckMode,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Output CSV `slide_id,<cell types>`
    #[arg(long)]
    out: PathBuf,
}

/// Failure of a subcommand, mapped onto the exit-code taxonomy.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(CpnnError),
    /// Failed gradient check; the report has already been printed.
    Check,
}

impl From<CpnnError> for CliError {
    fn from(e: CpnnError) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Usage(_) => 1,
        CliError::Check => 3,
        CliError::Core(e) => match e.class() {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };

    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
        {
            eprintln!("error: cannot configure {n} workers: {e}");
            return ExitCode::from(1);
        }
    }

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::FitPrototypes(a) => commands::fit_prototypes(a),
        Command::Deconvolve(a) => commands::deconvolve(a),
        Command::TrainSlide(a) => commands::train_slide(a),
        Command::TrainPatch(a) => commands::train_patch(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::ExportWeights(a) => commands::export_weights(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Core(e) => eprintln!("error: {e}"),
                CliError::Check => {}
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
