use clap::{Args, Parser, Subcommand};
use himt_cli::{config::ExperimentConfig, CliError};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "himt",
    about = "Multimodal survival prediction: train, evaluate, synthesize, ablate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (checkpoints, CSVs, or the synthetic dataset).
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Magnification subset override, e.g. "20x,10x".
    #[arg(long)]
    levels: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Also write each test patient's co-attention matrix as CSV under
    /// <out>/attention/.
    #[arg(long)]
    export_attention: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per cross-validation fold and write checkpoints.
    Train(RunArgs),
    /// Score the test folds of existing checkpoints; write folds.csv and summary.csv.
    Eval(EvalArgs),
    /// Generate a seeded synthetic dataset with a planted risk function.
    Synth(RunArgs),
    /// Run the magnification-subset ablation end-to-end; write ablation.csv.
    Ablate(RunArgs),
}

fn load_config(args: &RunArgs) -> himt_cli::Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(levels) = &args.levels {
        config.levels = levels
            .split(',')
            .map(himt_core::data::Magnification::from_str)
            .collect::<himt_core::Result<_>>()
            .map_err(CliError::Core)?;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> himt_cli::Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = load_config(&args)?;
            let outcome = himt_cli::run_train(&config, &args.out)?;
            for (fold, losses) in outcome.fold_losses.iter().enumerate() {
                println!(
                    "fold {fold}: epoch-1 loss {:.4}, final loss {:.4}",
                    losses.first().unwrap_or(&f64::NAN),
                    losses.last().unwrap_or(&f64::NAN)
                );
            }
            println!(
                "trained {} folds in {:.1}s; checkpoints in {}",
                outcome.fold_losses.len(),
                outcome.wall_clock_secs,
                args.out.display()
            );
            Ok(())
        }
        Command::Eval(args) => {
            let config = load_config(&args.run)?;
            let outcome = himt_cli::run_eval(&config, &args.run.out)?;
            for r in &outcome.reports {
                println!(
                    "fold {}: c_index {:.4} ({} pairs), auc {:.4}",
                    r.fold, r.c_index, r.n_pairs, r.auc
                );
            }
            println!(
                "c_index {:.4} +- {:.4}, auc {:.4} +- {:.4}",
                outcome.c_index.mean, outcome.c_index.std, outcome.auc.mean, outcome.auc.std
            );
            if args.export_attention {
                let written = himt_cli::export_attention(&config, &args.run.out)?;
                println!("wrote {written} co-attention matrices to {}/attention", args.run.out.display());
            }
            Ok(())
        }
        Command::Synth(args) => {
            let config = load_config(&args)?;
            let outcome = himt_cli::run_synth(&config, &args.out)?;
            println!(
                "wrote {} patients to {}; planted-risk sanity c_index {:.4}",
                outcome.patients,
                args.out.display(),
                outcome.sanity_c_index
            );
            Ok(())
        }
        Command::Ablate(args) => {
            let config = load_config(&args)?;
            let rows = himt_cli::run_ablation(&config, &args.out)?;
            for r in &rows {
                println!(
                    "levels {:<12} mean bag {:>7.1}: c_index {:.4} +- {:.4}, auc {:.4} +- {:.4}",
                    r.setting, r.mean_bag_size, r.c_index.mean, r.c_index.std, r.auc.mean, r.auc.std
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}: {err}", err.class());
            ExitCode::FAILURE
        }
    }
}
