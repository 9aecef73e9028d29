//! `scorekit` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use commands::Context;
use config::{usage, ConfigFile, UsageError};

#[derive(Parser, Debug)]
#[command(name = "scorekit", version, about = "Robust model scoring experiments on synthetic two-view data")]
struct Cli {
    /// Master random seed. Default 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Default: the current directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Default: all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print errors as JSON on stderr.
    #[arg(long, global = true)]
    error_json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic scenes.
    Synth(commands::SynthArgs),
    /// Generate hypothesis pools for saved scenes.
    Pool(commands::PoolArgs),
    /// Score models of one scene.
    Score(commands::ScoreArgs),
    /// Refine a model by IRLS / Levenberg-Marquardt.
    Lo(commands::LoArgs),
    /// Fit a learned monotone score from labeled scenes.
    Learn(commands::LearnArgs),
    /// Fit GaU parameters to MAGSAC++.
    MagsacFit(commands::MagsacFitArgs),
    /// Precompute error grids and validate thresholds.
    Sweep(commands::SweepArgs),
    /// Small-validation-set sensitivity from saved grids.
    Sensitivity(commands::SensitivityArgs),
    /// Summary report from saved grids.
    Report(commands::ReportArgs),
    /// Score selectivity under GT perturbations.
    Selectivity(commands::SelectivityArgs),
    /// Inlier counts of perturbed models.
    Consistency(commands::ConsistencyArgs),
}

fn report_error(err: &anyhow::Error, code: u8, as_json: bool) -> ExitCode {
    let msg = format!("{err:#}");
    if as_json {
        let kind = if code == 2 { "usage" } else { "runtime" };
        eprintln!("{}", json!({"error": kind, "message": msg, "exit_code": code}));
    } else {
        eprintln!("error: {msg}");
    }
    ExitCode::from(code)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    let global_u64 = |k: &str| cfg.global(k).and_then(|v| v.as_u64());
    let seed = cli.seed.or_else(|| global_u64("seed")).unwrap_or(0);
    let out = cli
        .out
        .or_else(|| cfg.global("out").and_then(|v| v.as_str()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Some(n) = cli.threads.or_else(|| global_u64("threads").map(|n| n as usize)) {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    std::fs::create_dir_all(&out)?;
    println!("seed: {seed}");
    let ctx = Context { seed, out, config: cfg };
    let c = &ctx.config;
    match cli.command {
        Command::Synth(a) => commands::synth(&ctx, c.merge("synth", &a)?),
        Command::Pool(a) => commands::pool(&ctx, c.merge("pool", &a)?),
        Command::Score(a) => commands::score(&ctx, c.merge("score", &a)?),
        Command::Lo(a) => commands::lo(&ctx, c.merge("lo", &a)?),
        Command::Learn(a) => commands::learn(&ctx, c.merge("learn", &a)?),
        Command::MagsacFit(a) => commands::magsac_fit(&ctx, c.merge("magsac-fit", &a)?),
        Command::Sweep(a) => commands::sweep(&ctx, c.merge("sweep", &a)?),
        Command::Sensitivity(a) => commands::sensitivity(&ctx, c.merge("sensitivity", &a)?),
        Command::Report(a) => commands::report(&ctx, c.merge("report", &a)?),
        Command::Selectivity(a) => commands::selectivity(&ctx, c.merge("selectivity", &a)?),
        Command::Consistency(a) => commands::consistency(&ctx, c.merge("consistency", &a)?),
    }
}

fn main() -> ExitCode {
    let as_json = std::env::args().any(|a| a == "--error-json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if as_json {
                return report_error(&anyhow::anyhow!(e.render().to_string().trim().to_string()), 2, true);
            }
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 };
            report_error(&e, code, as_json)
        }
    }
}
