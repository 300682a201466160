//! Command-line surface: subcommands and flags.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "treetensor",
    about = "Tensor-based Tree-LSTM experiments: dataset generation, parameter accounting, gradient verification, training, evaluation",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Cmd {
    /// Generate train/val/test dataset files
    Gen(GenArgs),
    /// Print parameter counts for one aggregation function
    Params(ParamsArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(GradcheckArgs),
    /// Train one configuration over one or more seeds
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset file
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[command(subcommand)]
    pub task: GenTask,
}

#[derive(Subcommand, Debug)]
pub enum GenTask {
    /// Nested MIN/MAX/MED/SM expressions over digits
    Listops(GenListopsArgs),
    /// Pairs of propositional formulas with natural-logic relations
    Lrt(GenLrtArgs),
}

#[derive(Args, Debug)]
pub struct GenListopsArgs {
    /// Directory for train.txt, val.txt, test.txt
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 20_000)]
    pub train_count: usize,
    #[arg(long, default_value_t = 2_000)]
    pub val_count: usize,
    #[arg(long, default_value_t = 2_000)]
    pub test_count: usize,
    /// Expression nesting depth of training samples
    #[arg(long, default_value_t = 3)]
    pub max_depth: usize,
    /// Nesting depth of val/test samples (defaults to --max-depth)
    #[arg(long)]
    pub eval_max_depth: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenLrtArgs {
    /// Directory for train.txt, val.txt, test.txt
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub train_count: usize,
    #[arg(long, default_value_t = 2_000)]
    pub val_count: usize,
    #[arg(long, default_value_t = 2_000)]
    pub test_count: usize,
    /// Maximum logical operators per training formula
    #[arg(long, default_value_t = 4)]
    pub max_operators: usize,
    /// Operator budget of val/test formulas (defaults to --max-operators)
    #[arg(long)]
    pub eval_max_operators: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ParamsArgs {
    /// sum | full | hosvd
    #[arg(long)]
    pub aggregator: String,
    /// Hidden state size
    #[arg(long)]
    pub c: usize,
    /// Tucker rank (hosvd only)
    #[arg(long)]
    pub r: Option<usize>,
    /// Context size L (maximum outdegree)
    #[arg(long, visible_alias = "l")]
    pub outdegree: usize,
    /// Label input dimension m (0 = operator-sliced)
    #[arg(long, default_value_t = 0)]
    pub label_dim: usize,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// listops | lrt (fixes outdegree, leaf encoding, and the head)
    #[arg(long)]
    pub task: String,
    /// sum | full | hosvd
    #[arg(long)]
    pub aggregator: String,
    #[arg(long, default_value_t = 3)]
    pub c: usize,
    #[arg(long)]
    pub r: Option<usize>,
    /// Operator nesting depth of the probe tree
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat key=value config file; flags override file and environment
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// listops | lrt
    #[arg(long)]
    pub task: Option<String>,
    /// sum | full | hosvd
    #[arg(long)]
    pub aggregator: Option<String>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Training split file
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation split file
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Run directory (per-seed subdirectories with metrics + checkpoints)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated seed list, one run per seed
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2_weight: Option<f64>,
    #[arg(long)]
    pub l2_exempt_biases: Option<bool>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// tanh | sigmoid update nonlinearity
    #[arg(long)]
    pub update_activation: Option<String>,
    /// Comparison units of the relation head
    #[arg(long)]
    pub head_units: Option<usize>,
    /// Worker threads; 1 guarantees bitwise reproducibility
    #[arg(long)]
    pub threads: Option<usize>,
    /// Append a summary row (model,c,r,param_count,mean,std) to this CSV
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Continue from last.ck in each seed directory when present
    #[arg(long, default_value_t = false)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset file to evaluate
    #[arg(long)]
    pub data: PathBuf,
    /// Split name echoed in the report
    #[arg(long, default_value = "eval")]
    pub split: String,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Optional consistency checks against the checkpoint's config
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub c: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub aggregator: Option<String>,
}
