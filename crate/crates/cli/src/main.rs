use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfcdf_cli::commands::{cmd_oracle, cmd_report, cmd_run, cmd_sweep, Overrides};
use mfcdf_cli::config::{EstimatorKind, LoadedConfig};
use mfcdf_cli::CliError;

#[derive(Parser)]
#[command(name = "mfcdf", version, about = "Budget-constrained multifidelity CDF experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured estimator once and write estimates, errors,
    /// the exploration trace and risk reports.
    Run(Common),
    /// Repeat trials over all budgets and aggregate errors and selections.
    Sweep(Common),
    /// Large-sample oracle statistics: per-subset loss coefficients and
    /// cross-model correlations.
    Oracle(Common),
    /// Risk measures of the estimates in a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Budget(s), replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    budget: Vec<f64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated estimator names.
    #[arg(long, value_delimiter = ',')]
    estimators: Vec<EstimatorKind>,
    /// Worker threads for sweeps; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory; defaults to the output directory of `--config`.
    dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// CVaR levels.
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,
    /// Quantile levels.
    #[arg(long, value_delimiter = ',')]
    quantiles: Vec<f64>,
}

impl Common {
    fn split(self) -> Result<(LoadedConfig, Overrides), CliError> {
        let lc = LoadedConfig::from_path(&self.config)?;
        Ok((
            lc,
            Overrides {
                budgets: self.budget,
                trials: self.trials,
                seed: self.seed,
                out: self.out,
                estimators: self.estimators,
                workers: self.workers,
            },
        ))
    }
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let lc = args.config.as_deref().map(LoadedConfig::from_path).transpose()?;
    let dir = match (args.dir, &lc) {
        (Some(d), _) => d,
        (None, Some(lc)) => lc.out_dir(args.out.as_deref()),
        (None, None) => args
            .out
            .ok_or_else(|| CliError::Config("report needs a run directory".into()))?,
    };
    let pick = |flag: Vec<f64>, from: fn(&LoadedConfig) -> Vec<f64>, default: &[f64]| {
        if !flag.is_empty() {
            flag
        } else {
            lc.as_ref().map_or_else(|| default.to_vec(), from)
        }
    };
    let levels = pick(args.levels, |l| l.config.cvar_levels.clone(), &[0.95, 0.99]);
    let quantiles = pick(args.quantiles, |l| l.config.quantile_levels.clone(), &[0.05, 0.5, 0.95]);
    let reports = cmd_report(&dir, &levels, &quantiles)?;
    for (name, r) in &reports {
        let cvar: Vec<String> = r.cvar.iter().map(|c| format!("{}@{}", c.value, c.level)).collect();
        println!("{name:<18} mean {:<12.6} std {:<12.6} cvar {}", r.mean, r.std, cvar.join(" "));
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(c) => {
            let (lc, o) = c.split()?;
            let dir = cmd_run(lc, &o)?;
            println!("{}", dir.display());
        }
        Command::Sweep(c) => {
            let (lc, o) = c.split()?;
            let (dir, result) = cmd_sweep(lc, &o)?;
            for r in &result.rows {
                println!(
                    "{:<18} B={:<10} mean {:<12} fail {}",
                    r.estimator,
                    r.budget,
                    r.mean_error.map_or("-".into(), |e| format!("{e:.4e}")),
                    r.failures
                );
            }
            println!("{}", dir.display());
        }
        Command::Oracle(c) => {
            let (lc, o) = c.split()?;
            let (dir, stats) = cmd_oracle(lc, &o)?;
            for s in &stats.subsets {
                println!("{:<12} gamma {:<12.6} m* {:.1}", s.subset.to_string(), s.gamma, s.m_star);
            }
            println!("best {}", stats.best);
            println!("{}", dir.display());
        }
        Command::Report(a) => report(a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
