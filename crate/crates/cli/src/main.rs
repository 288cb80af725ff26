mod bench;
mod commands;
mod config;
mod error;
mod pipeline;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use slicematch::align::{OtVariant, WeightScheme};

#[global_allocator]
static ALLOC: bench::CountingAlloc = bench::CountingAlloc;

/// Dense correspondences between triangle meshes from regularized
/// functional maps, sliced optimal-transport alignment and Sinkhorn-driven
/// refinement.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "slicematch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the spectral basis and WKS descriptor cache of a mesh.
    #[command(args_override_self = true)]
    Preprocess(PreprocessArgs),
    /// Match one mesh pair, or every pair of a pairs file.
    #[command(args_override_self = true)]
    Match(MatchArgs),
    /// Score a correspondence: geodesic error and optional segmentation mIoU.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Pull per-vertex labels through a correspondence.
    #[command(args_override_self = true)]
    Transfer(TransferArgs),
    /// Time and measure peak memory of the transport kernels.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Write both meshes as PLY with colors carried through a correspondence.
    #[command(args_override_self = true)]
    ExportColor(ExportColorArgs),
    /// Train the per-vertex feature refiner on unlabeled pairs.
    #[command(args_override_self = true)]
    Train(TrainArgs),
}

#[derive(Debug, Clone, Args)]
struct ShapeArgs {
    /// Laplace–Beltrami eigenpairs kept.
    #[arg(long, default_value_t = 200)]
    k: usize,
    /// WKS energy levels (descriptor dimension).
    #[arg(long, default_value_t = 128)]
    wks_dim: usize,
}

#[derive(Debug, Clone, Args)]
struct LossArgs {
    /// Weight of the resolvent regularizer in the functional-map solve.
    #[arg(long, default_value_t = 1e-2)]
    lambda_reg: f64,
    /// Resolvent mask exponent.
    #[arg(long, default_value_t = 0.5)]
    resolvent_gamma: f64,
    /// Weight of the functional-map structure loss.
    #[arg(long, default_value_t = 1.0)]
    lambda1: f64,
    /// Weight of the OT alignment loss.
    #[arg(long, default_value_t = 100.0)]
    lambda2: f64,
    /// Weight of the properness loss.
    #[arg(long, default_value_t = 1.0)]
    lambda3: f64,
    /// Bijectivity weight inside the structure loss.
    #[arg(long, default_value_t = 1.0)]
    alpha1: f64,
    /// Orthogonality weight inside the structure loss.
    #[arg(long, default_value_t = 1.0)]
    alpha2: f64,
    /// Wasserstein order.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Number of random projections L.
    #[arg(long, default_value_t = 200)]
    projections: usize,
    /// Softmax temperature of the soft similarity.
    #[arg(long, default_value_t = 0.07)]
    tau: f64,
    /// Alignment loss: biSW, biEBSW, uniSW, uniEBSW or MSE.
    #[arg(long, default_value_t = OtVariant::BiEbsw)]
    ot_variant: OtVariant,
    /// Vertex weights of the feature measures: uniform or area.
    #[arg(long, default_value_t = WeightScheme::Uniform)]
    weights: WeightScheme,
    /// Seed for projections and any other randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct RefineArgs {
    /// Outer refinement rounds T.
    #[arg(long, default_value_t = 12)]
    iterations: usize,
    /// Initial step, as the largest per-vertex feature displacement.
    #[arg(long, default_value_t = 1e-2)]
    step_size: f64,
    /// Gradient steps per round with the couplings held fixed.
    #[arg(long, default_value_t = 5)]
    inner_steps: usize,
    /// Sinkhorn sweeps differentiated through (0 freezes the couplings).
    #[arg(long, default_value_t = 0)]
    unrolled_iters: usize,
    /// Step halvings tried before a round gives up.
    #[arg(long, default_value_t = 12)]
    max_halvings: usize,
    /// Entropic regularization relative to the largest cost entry.
    #[arg(long, default_value_t = 1e-2)]
    epsilon_rel: f64,
    /// Sinkhorn iteration budget.
    #[arg(long, default_value_t = 100)]
    sinkhorn_iters: usize,
    /// Sinkhorn marginal tolerance.
    #[arg(long, default_value_t = 1e-6)]
    sinkhorn_tol: f64,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    /// Input mesh (.off, .ply or .obj).
    mesh: PathBuf,
    /// Directory receiving <stem>.spec and <stem>.wks.fmat.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    shape: ShapeArgs,
    /// key = value file with defaults for any flag of this command.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MatchArgs {
    /// Source mesh X.
    #[arg(required_unless_present = "pairs", conflicts_with = "pairs")]
    mesh_x: Option<PathBuf>,
    /// Target mesh Y.
    #[arg(required_unless_present = "pairs", conflicts_with = "pairs")]
    mesh_y: Option<PathBuf>,
    /// File of `mesh_x mesh_y [pair_id]` lines; outputs go to OUT_DIR/<pair_id>/.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Output directory for corr.txt, maps.fmap and trace.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// Skip adaptive refinement; plain nearest neighbours in feature space.
    #[arg(long)]
    no_refine: bool,
    /// Use external per-vertex features (FMAT) for X and Y instead of WKS.
    #[arg(long, num_args = 2, value_names = ["X_FMAT", "Y_FMAT"], conflicts_with_all = ["pairs", "refiner"])]
    features: Option<Vec<PathBuf>>,
    /// Pass the WKS descriptors through a trained refiner (RFNW).
    #[arg(long)]
    refiner: Option<PathBuf>,
    /// Read and write basis/descriptor caches here (keyed by mesh file stem).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Pairs processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    loss: LossArgs,
    #[command(flatten)]
    refine: RefineArgs,
    /// key = value file with defaults for any flag of this command.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted correspondence (X vertex → Y vertex per line).
    #[arg(long)]
    corr: PathBuf,
    /// Ground-truth correspondence in the same format.
    #[arg(long)]
    gt: PathBuf,
    /// Target mesh Y, on which geodesic errors are measured.
    #[arg(long)]
    mesh: PathBuf,
    /// Coarse labels of Y, transferred to X for mIoU.
    #[arg(long, requires = "labels_gt")]
    labels: Option<PathBuf>,
    /// Ground-truth coarse labels of X.
    #[arg(long, requires = "labels")]
    labels_gt: Option<PathBuf>,
    /// Fine labels of Y.
    #[arg(long, requires = "fine_labels_gt")]
    fine_labels: Option<PathBuf>,
    /// Ground-truth fine labels of X.
    #[arg(long, requires = "fine_labels")]
    fine_labels_gt: Option<PathBuf>,
    /// Identifier written in the pair_id column.
    #[arg(long, default_value = "pair")]
    pair_id: String,
    /// CSV report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append a row to an existing report instead of overwriting it.
    #[arg(long, requires = "out")]
    append: bool,
}

#[derive(Debug, Args)]
struct TransferArgs {
    /// Correspondence X → Y.
    #[arg(long)]
    corr: PathBuf,
    /// Per-vertex labels of Y.
    #[arg(long)]
    labels: PathBuf,
    /// Output labels of X.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Point counts n, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1000, 2000, 4000])]
    sizes: Vec<usize>,
    /// Point dimension d.
    #[arg(long, default_value_t = 3)]
    dim: usize,
    /// Projections L for the sliced distances.
    #[arg(long, default_value_t = 200)]
    projections: usize,
    /// Kernels to run: sw, ebsw, sinkhorn.
    #[arg(long, value_delimiter = ',', default_values_t = ["sw".to_string(), "sinkhorn".to_string()])]
    ops: Vec<String>,
    /// Runs per measurement; the minimum is reported.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Sinkhorn iteration budget per run.
    #[arg(long, default_value_t = 10)]
    sinkhorn_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key = value file with defaults for any flag of this command.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportColorArgs {
    /// Correspondence X → Y.
    #[arg(long)]
    corr: PathBuf,
    #[arg(long)]
    mesh_x: PathBuf,
    /// Mesh Y, colored by vertex position.
    #[arg(long)]
    mesh_y: PathBuf,
    /// Receives <stem_x>.colors.ply and <stem_y>.colors.ply.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// File of `mesh_x mesh_y [pair_id]` lines.
    #[arg(long)]
    pairs: PathBuf,
    /// Output weights (RFNW).
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the mean loss per epoch.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    /// Hidden layer width.
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    /// Output feature dimension.
    #[arg(long, default_value_t = 256)]
    output: usize,
    /// Learning rate at the first epoch (cosine annealed).
    #[arg(long, default_value_t = 1e-3)]
    lr_max: f64,
    /// Learning rate at the last epoch.
    #[arg(long, default_value_t = 1e-4)]
    lr_min: f64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    shape: ShapeArgs,
    #[command(flatten)]
    loss: LossArgs,
    /// key = value file with defaults for any flag of this command.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn run(args: Vec<OsString>) -> Result<(), ExitCode> {
    let fail = |e: error::CliError| {
        eprintln!("error: {e}");
        ExitCode::from(e.exit_code())
    };
    let args = config::expand(args, &Cli::command()).map_err(fail)?;
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let _ = e.print();
        ExitCode::from(if e.use_stderr() { 1 } else { 0 })
    })?;
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Match(a) => commands::match_meshes(a),
        Command::Eval(a) => commands::eval(a),
        Command::Transfer(a) => commands::transfer(a),
        Command::Bench(a) => commands::bench(a),
        Command::ExportColor(a) => commands::export_color(a),
        Command::Train(a) => commands::train(a),
    };
    result.map_err(fail)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
