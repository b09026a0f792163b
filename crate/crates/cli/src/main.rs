//! `crm-lab`: simulate logged bandit feedback, train and tune policies,
//! evaluate them and compute risk bounds.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors, 3 when
//! training aborts on a non-finite value.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "crm-lab",
    version,
    about = "Counterfactual risk minimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a labeled synthetic classification task.
    Generate(GenerateArgs),
    /// Convert labeled data into logged bandit feedback.
    Simulate(SimulateArgs),
    /// Estimate a logging policy from logged actions.
    LearnLogging(LearnLoggingArgs),
    /// Train a policy on logged feedback.
    Train(TrainArgs),
    /// Pick a regularization strength by k-fold cross-validation.
    Tune(TuneArgs),
    /// Score a model on labeled test data.
    Evaluate(EvaluateArgs),
    /// Compute risk bounds for a mixed-logit policy.
    Bound(BoundArgs),
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    /// Passes over the data (default depends on the command).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub batch_size: usize,
    /// AdaGrad learning rate.
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub adagrad_smoothing: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    /// Scale of the class means.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 2.0)]
    pub noise: f64,
    /// Seed for the class means; files that share it come from the same task.
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    /// Seed for the sampled examples.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Labeled CSV with columns f0..f{d-1},label.
    #[arg(long)]
    pub labeled: PathBuf,
    /// Logging policy model. Required unless --fit-logging is given.
    #[arg(long, conflicts_with = "fit_logging")]
    pub logging_model: Option<PathBuf>,
    /// Fit the logging policy on this many labeled examples and log the rest.
    #[arg(long, requires = "k")]
    pub fit_logging: Option<usize>,
    /// Where to save the fitted logging policy.
    #[arg(long, requires = "fit_logging")]
    pub logging_model_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    pub fit_lambda: f64,
    #[arg(long, default_value_t = 100)]
    pub fit_epochs: usize,
    /// Trial index selecting the logging split.
    #[arg(long, default_value_t = 0)]
    pub trial: usize,
    /// Number of actions; taken from the model when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    /// Inverse temperature applied to the logging policy.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LearnLoggingArgs {
    #[arg(long)]
    pub logged: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lambda: f64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub logged: PathBuf,
    /// Number of actions; taken from the prior model when omitted.
    #[arg(long)]
    pub k: Option<usize>,
    /// ips_lpr, wnll_lpr, ips_l2, poem, poem_l2 or logging_nll.
    #[arg(long, default_value = "ips_lpr")]
    pub objective: String,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    /// L2 weight for poem_l2.
    #[arg(long, default_value_t = 0.0)]
    pub lambda_l2: f64,
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma0: f64,
    /// inverse-n, closed-form, or a number in (0, sigma0].
    #[arg(long, default_value = "inverse-n")]
    pub sigma_mode: String,
    /// Prior policy for the LPR objectives.
    #[arg(long)]
    pub prior_model: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-epoch objective trace (CSV).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    #[arg(long)]
    pub logged: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "ips_lpr")]
    pub objective: String,
    /// Comma-separated grid; defaults to 1e-8..1e-3 (1e-3..1e2 for POEM).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Tune lambda_l2 instead of lambda.
    #[arg(long)]
    pub tune_l2: bool,
    /// Fixed lambda while tuning lambda_l2, or lambda_l2 while tuning lambda.
    #[arg(long, default_value_t = 0.0)]
    pub other_lambda: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    #[arg(long)]
    pub prior_model: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Worker threads for the fold x lambda jobs.
    #[arg(long, env = "CRM_LAB_THREADS")]
    pub threads: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    /// Posterior mean.
    #[arg(long)]
    pub model: PathBuf,
    /// Prior mean, or the learned logging policy for --learned-prior.
    #[arg(long)]
    pub prior_model: PathBuf,
    #[arg(long)]
    pub logged: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub tau: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Posterior variance; defaults to the value stored in the model.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Prior variance; defaults to the model's value, then 1.
    #[arg(long)]
    pub sigma0: Option<f64>,
    /// Add the truncated-IPS bound for a fixed tau.
    #[arg(long)]
    pub fixed_tau: bool,
    /// Add the bound that holds for every dyadic tau at once.
    #[arg(long)]
    pub all_tau: bool,
    /// Add the bound for a prior learned from the same logs.
    #[arg(long)]
    pub learned_prior: bool,
    /// Regularization used when the prior was learned.
    #[arg(long, default_value_t = 0.01)]
    pub rerm_lambda: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::LearnLogging(a) => commands::learn_logging(&a),
        Command::Train(a) => commands::train(&a),
        Command::Tune(a) => commands::tune(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Bound(a) => commands::bound(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut message = e.to_string();
            for cause in e.chain().skip(1) {
                let text = cause.to_string();
                if !message.contains(&text) {
                    message = format!("{message}: {text}");
                }
            }
            eprintln!("error: {message}");
            let numeric = e
                .downcast_ref::<crm_lab::CrmError>()
                .is_some_and(crm_lab::CrmError::is_numeric);
            ExitCode::from(if numeric { 3 } else { 2 })
        }
    }
}
