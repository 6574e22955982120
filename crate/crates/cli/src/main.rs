//! `aspect`: synthetic data, training, attacks, evaluation, gate diagnostics
//! and the theory checks, one subcommand each.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use aspect_core::trainer::Ablation;
use aspect_core::Error;

use commands::{AttackKind, Common, EvalArgs, Protocol};
use manifest::RunManifest;

#[derive(Parser, Debug)]
#[command(name = "aspect", version, about = "Adaptive spectral graph contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (edges.csv, features.csv, labels.csv).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Master seed. Overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    /// Extra `key=value` config override; repeatable, applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AblationArg {
    None,
    NoGate,
    NoRayleigh,
    NoAdversarial,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::None => Ablation::None,
            AblationArg::NoGate => Ablation::NoGate,
            AblationArg::NoRayleigh => Ablation::NoRayleigh,
            AblationArg::NoAdversarial => Ablation::NoAdversarial,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AttackArg {
    Pgd,
    Dice,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProtocolArg {
    Clean,
    Poisoned,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic mixed homophilic/heterophilic dataset.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Fit a model; writes checkpoint.json, curves.csv and config.cfg.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
    },
    /// Perturb a dataset with PGD (needs --checkpoint) or DICE.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "dice")]
        attack: AttackArg,
        /// Fraction of edges modified by DICE.
        #[arg(long, default_value_t = 0.1)]
        rate: f64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Linear-probe evaluation; writes metrics.json.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "clean")]
        protocol: ProtocolArg,
        /// Use a trained model instead of training (clean protocol only).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// metrics.json of the clean run, for the accuracy drop.
        #[arg(long)]
        clean_metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        splits: u64,
        #[arg(long, value_enum)]
        ablation: Option<AblationArg>,
    },
    /// Gate values on clean and PGD-attacked inputs; writes gates.csv.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Numerical checks of the variance and regret results.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn common_of(a: &CommonArgs) -> Result<Common, Error> {
    let overrides = a
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Common {
        config: a.config.clone(),
        data: a.data.clone(),
        out: a.out.clone(),
        seed: a.seed,
        threads: a.threads as usize,
        overrides,
    })
}

fn run(cli: Cli, argv: Vec<String>) -> Result<(), Error> {
    let (name, args) = match &cli.command {
        Command::Synth { common } => ("synth", common),
        Command::Train { common, .. } => ("train", common),
        Command::Attack { common, .. } => ("attack", common),
        Command::Eval { common, .. } => ("eval", common),
        Command::Diagnose { common, .. } => ("diagnose", common),
        Command::Verify { common } => ("verify", common),
    };
    let common = common_of(args)?;
    let mut manifest = RunManifest::new(name, argv, &common.out);
    let outcome = match &cli.command {
        Command::Synth { .. } => commands::synth(&common, &mut manifest),
        Command::Train { ablation, .. } => commands::train_cmd(&common, ablation.map(Into::into), &mut manifest),
        Command::Attack { attack, rate, checkpoint, .. } => {
            let kind = match attack {
                AttackArg::Pgd => AttackKind::Pgd,
                AttackArg::Dice => AttackKind::Dice,
            };
            commands::attack_cmd(&common, kind, *rate, checkpoint.as_deref(), &mut manifest)
        }
        Command::Eval { protocol, checkpoint, clean_metrics, splits, ablation, .. } => {
            let args = EvalArgs {
                protocol: match protocol {
                    ProtocolArg::Clean => Protocol::Clean,
                    ProtocolArg::Poisoned => Protocol::Poisoned,
                },
                checkpoint: checkpoint.as_deref(),
                clean_metrics: clean_metrics.as_deref(),
                splits: *splits as usize,
                ablation: ablation.map(Into::into),
            };
            commands::eval_cmd(&common, &args, &mut manifest)
        }
        Command::Diagnose { checkpoint, .. } => commands::diagnose_cmd(&common, checkpoint, &mut manifest),
        Command::Verify { .. } => commands::verify_cmd(&common, &mut manifest),
    };
    // Only runs that got as far as creating the output directory leave a manifest.
    if common.out.is_dir() {
        manifest.finish(&outcome)?;
    }
    outcome
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
