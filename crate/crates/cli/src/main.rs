use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vinevi_cli::{
    cmd_alpha_sweep, cmd_fit, cmd_gen_data, cmd_verify, CliError, CliResult, ExperimentKind,
    ExperimentSpec,
};

#[derive(Parser)]
#[command(name = "vinevi", version = env!("VINEVI_BUILD"), about = "Stepwise vine-copula VI experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a regression dataset (CSV plus JSON sidecar).
    GenData(Common),
    /// Fit a dataset and export report, family, samples and metrics.
    Fit(Common),
    /// Run the α grid over Wishart-Gaussian examples.
    AlphaSweep(Common),
    /// Run the numerical verification harness.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory (overrides the experiment file).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the experiment file).
    #[arg(long)]
    seed: Option<u64>,
    /// Smaller verification run.
    #[arg(long)]
    quick: bool,
}

fn load(common: &Common, default_kind: Option<ExperimentKind>) -> CliResult<ExperimentSpec> {
    let mut spec = match (&common.spec, default_kind) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            ExperimentSpec::from_json(&text)?
        }
        (None, Some(kind)) => ExperimentSpec::new(kind, common.seed.unwrap_or(0)),
        (None, None) => return Err(CliError::Spec("--spec is required".into())),
    };
    if let Some(out) = &common.out {
        spec.output_dir = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    spec.quick |= common.quick;
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match cli.command {
        Command::GenData(c) => {
            let dir = cmd_gen_data(&load(&c, None)?)?;
            println!("dataset written to {}", dir.display());
        }
        Command::Fit(c) => {
            let out = cmd_fit(&load(&c, None)?)?;
            println!(
                "truncation {} forward KL {:.6} rel RMSE std {:.4} ({:.1} s)",
                out.report.truncation,
                out.metrics.forward_kl,
                out.metrics.rel_rmse_std,
                out.report.wall_clock_secs
            );
        }
        Command::AlphaSweep(c) => {
            let cells = cmd_alpha_sweep(&load(&c, None)?)?;
            println!("{} sweep cells written", cells.len());
        }
        Command::Verify(c) => {
            let outcome = cmd_verify(&load(&c, Some(ExperimentKind::VerifyTheorems))?)?;
            for check in &outcome.manifest.checks {
                let mark = if check.passed { "PASS" } else { "FAIL" };
                println!(
                    "{mark} {} residual {:e} ({:?} {:e})",
                    check.name, check.residual, check.expect, check.threshold
                );
            }
            if let Some(p) = &outcome.path {
                println!("manifest written to {}", p.display());
            }
            if !outcome.manifest.all_passed {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
