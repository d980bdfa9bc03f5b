use crate::config::{Format, Overrides};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "dpacct", version, about = "Noise calibration and validation for DP-SGD accountants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate the noise multiplier per dataset, step count, ε and accountant.
    Calibrate(ExperimentArgs),
    /// Write σ-versus-ε curves, one CSV per dataset.
    Curve(ExperimentArgs),
    /// Compare accountants with the Monte Carlo oracle.
    Validate(ValidateArgs),
    /// Train a small model privately on synthetic or file data.
    TrainSim(TrainArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// MNLI, QNLI, QQP, SST-2 or all.
    #[arg(long)]
    pub preset: Option<String>,
    /// Dataset size, instead of a preset.
    #[arg(long)]
    pub n: Option<u64>,
    /// Batch size (expected, under Poisson sampling).
    #[arg(long)]
    pub batch: Option<u64>,
    /// A single value or a:b:step.
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Number of compositions.
    #[arg(long)]
    pub m: Option<u64>,
    /// lo:hi:step.
    #[arg(long = "m-sweep")]
    pub m_sweep: Option<String>,
    /// EW, PRV or RDP; repeatable or comma-separated.
    #[arg(long)]
    pub accountant: Vec<String>,
    /// Edgeworth expansion order (0, 1 or 2).
    #[arg(long = "order-k")]
    pub order_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ExperimentArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            n: self.n,
            batch: self.batch,
            epsilon: self.epsilon.clone(),
            delta: self.delta,
            m: self.m,
            m_sweep: self.m_sweep.clone(),
            accountant: self.accountant.clone(),
            order_k: self.order_k,
            seed: self.seed,
            out: self.out.clone(),
            format: self.format,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// EW, PRV or RDP; repeatable or comma-separated.
    #[arg(long)]
    pub accountant: Vec<String>,
    #[arg(long = "order-k")]
    pub order_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Oracle samples per hypothesis and cell.
    #[arg(long)]
    pub samples: Option<u64>,
    /// Widen the Edgeworth band by its Berry–Esseen envelope.
    #[arg(long)]
    pub berry_esseen: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Evaluate the Edgeworth accountant at σ·(1 + x); harness self-test.
    #[arg(long = "perturb-ew-sigma", hide = true)]
    pub perturb_ew_sigma: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Whitespace-separated data file; synthetic clusters when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic dataset size.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Distance between synthetic class means.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub batch: Option<u64>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Training steps.
    #[arg(long)]
    pub m: Option<u64>,
    /// Accountant used for calibration.
    #[arg(long)]
    pub accountant: Vec<String>,
    #[arg(long = "order-k")]
    pub order_k: Option<usize>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// Steps between the weight snapshots that define the carriers.
    #[arg(long = "history-lag")]
    pub history_lag: Option<usize>,
    /// Hidden width; a linear model when absent.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long = "learning-rate")]
    pub learning_rate: Option<f64>,
    /// Use this σ instead of calibrating; 0 disables noise and accounting.
    #[arg(long = "sigma-override")]
    pub sigma_override: Option<f64>,
    /// Train without noise or accounting (same as --sigma-override 0).
    #[arg(long = "no-accounting")]
    pub no_accounting: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}
