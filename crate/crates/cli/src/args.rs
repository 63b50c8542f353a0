//! Command-line grammar. Everything here is declarative; the behavior
//! lives in [`crate::commands`].

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use vrnn_core::attack::AttackKind;
use vrnn_core::train::{OptimizerKind, Scheme};

/// Train, attack, and verify small certifiably robust ReLU classifiers.
#[derive(Debug, Parser)]
#[command(name = "vrnn", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier and save the model, epoch CSV, and manifest.
    Train(TrainArgs),
    /// Attack a saved model and report per-sample successes.
    Attack(AttackArgs),
    /// Certify per-input robustness of a saved model.
    Verify(VerifyArgs),
    /// Materialize a dataset specification to a CSV file.
    #[command(name = "gen-data")]
    GenData(GenDataArgs),
    /// Replay a previous run from its manifest.
    Rerun(RerunArgs),
}

/// Token for `--scheme`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Regular,
    Adv,
    Verifiable,
    Mixtrain,
}

impl SchemeArg {
    pub fn to_scheme(self) -> Scheme {
        match self {
            SchemeArg::Regular => Scheme::Regular,
            SchemeArg::Adv => Scheme::Adversarial,
            SchemeArg::Verifiable => Scheme::Verifiable,
            SchemeArg::Mixtrain => Scheme::Mixtrain,
        }
    }

    /// The command-line token, as written in manifests.
    pub fn token(self) -> &'static str {
        match self {
            SchemeArg::Regular => "regular",
            SchemeArg::Adv => "adv",
            SchemeArg::Verifiable => "verifiable",
            SchemeArg::Mixtrain => "mixtrain",
        }
    }
}

/// Token for `--optimizer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl OptimizerArg {
    pub fn to_kind(self) -> OptimizerKind {
        match self {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            OptimizerArg::Sgd => "sgd",
            OptimizerArg::Adam => "adam",
        }
    }
}

/// Token for `--attack`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AttackArg {
    Fgsm,
    Pgd,
    Interval,
}

impl AttackArg {
    pub fn to_kind(self) -> AttackKind {
        match self {
            AttackArg::Fgsm => AttackKind::Fgsm,
            AttackArg::Pgd => AttackKind::Pgd,
            AttackArg::Interval => AttackKind::Interval,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            AttackArg::Fgsm => "fgsm",
            AttackArg::Pgd => "pgd",
            AttackArg::Interval => "interval",
        }
    }
}

#[derive(Debug, Parser)]
pub struct TrainArgs {
    /// Training scheme.
    #[arg(long, value_enum)]
    pub scheme: SchemeArg,
    /// Dataset specification: csv:PATH | idx:IMAGES:LABELS |
    /// moons:N:NOISE:SEED | blobs:N:K:SPREAD:SEED | digits:N:NOISE:SEED.
    #[arg(long)]
    pub data: String,
    /// Hidden layer widths, comma separated; empty string for a linear model.
    #[arg(long, default_value = "64,64")]
    pub arch: String,
    /// Number of training epochs; 0 saves the freshly initialized model.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long = "batch-size", default_value_t = 32)]
    pub batch_size: usize,
    /// Optimizer.
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub lr: f32,
    /// Perturbation budget on the raw [0,1] input scale.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f32,
    /// Epochs over which the training radius ramps up to --epsilon.
    #[arg(long = "warmup-epochs", default_value_t = 10)]
    pub warmup_epochs: usize,
    /// Robust-subsample size per batch (mixtrain only; default 1).
    #[arg(long)]
    pub k: Option<usize>,
    /// Initial robust-loss mixing weight (mixtrain only; default 0.8).
    #[arg(long)]
    pub alpha0: Option<f32>,
    /// Sampled-accuracy target steering the mixing weight (mixtrain only;
    /// default 0.9).
    #[arg(long = "acc-target")]
    pub acc_target: Option<f32>,
    /// Seed for initialization, shuffling, and attack restarts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV path (default: <out>.epochs.csv).
    #[arg(long = "epoch-csv")]
    pub epoch_csv: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest).
    #[arg(long = "manifest-out")]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct AttackArgs {
    /// Saved model to attack.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset specification (see `train --help`).
    #[arg(long)]
    pub data: String,
    /// Attack algorithm.
    #[arg(long, value_enum)]
    pub attack: AttackArg,
    /// Perturbation budget on the raw [0,1] input scale; 0 checks the
    /// clean points only.
    #[arg(long)]
    pub epsilon: f32,
    /// Gradient steps per PGD run (default 40; for the interval attack
    /// this sizes its PGD finisher).
    #[arg(long = "pgd-steps")]
    pub pgd_steps: Option<usize>,
    /// PGD step size on the raw input scale (default: epsilon/8; the
    /// interval finisher defaults to epsilon/10).
    #[arg(long = "pgd-step")]
    pub pgd_step: Option<f32>,
    /// Extra random PGD restarts after the clean start (pgd only).
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Bound-guided iterations (interval only; default 20).
    #[arg(long = "ia-iters")]
    pub ia_iters: Option<usize>,
    /// Bound-guided step size on the raw input scale (interval only;
    /// default: epsilon/4).
    #[arg(long = "ia-step")]
    pub ia_step: Option<f32>,
    /// Initial probe radius on the raw input scale (interval only;
    /// default: epsilon/16).
    #[arg(long = "ia-eps0")]
    pub ia_eps0: Option<f32>,
    /// Probe radius growth factor per check (interval only; default 2).
    #[arg(long = "ia-growth")]
    pub ia_growth: Option<f32>,
    /// Seed for restart sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-sample CSV output path.
    #[arg(long, default_value = "attack.csv")]
    pub report: PathBuf,
    /// Manifest path (default: <report>.manifest).
    #[arg(long = "manifest-out")]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct VerifyArgs {
    /// Saved model to certify.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset specification (see `train --help`).
    #[arg(long)]
    pub data: String,
    /// Certification radius on the raw [0,1] input scale.
    #[arg(long)]
    pub epsilon: f32,
    /// Worker threads for the bisection pool.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Maximum bisection depth per input.
    #[arg(long = "max-depth", default_value_t = 20)]
    pub max_depth: usize,
    /// Node-processing time budget per input, in milliseconds.
    #[arg(long = "timeout-ms", default_value_t = 10_000)]
    pub timeout_ms: u64,
    /// Skip the attack pass; the summary reports ERA=na.
    #[arg(long = "no-era", default_value_t = false)]
    pub no_era: bool,
    /// Seed for the ERA attack restarts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-input verdict CSV output path.
    #[arg(long, default_value = "verdicts.csv")]
    pub report: PathBuf,
    /// Manifest path (default: <report>.manifest).
    #[arg(long = "manifest-out")]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct GenDataArgs {
    /// Dataset specification (see `train --help`).
    #[arg(long)]
    pub data: String,
    /// Output CSV path (header: x0,x1,...,label).
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: <out>.manifest).
    #[arg(long = "manifest-out")]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
pub struct RerunArgs {
    /// Manifest of the run to replay.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Override the model/CSV output path (`train`/`gen-data` runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the report path (`attack`/`verify` runs).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Override the per-epoch CSV path (`train` runs).
    #[arg(long = "epoch-csv")]
    pub epoch_csv: Option<PathBuf>,
    /// Override the manifest written by the replayed run.
    #[arg(long = "manifest-out")]
    pub manifest_out: Option<PathBuf>,
}
