use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subnyq_harness::experiments::{
    crb_report, identify_report, rmse_report, run_crb, run_identify, run_rmse, run_validate, validate_report,
    worker_count,
};
use subnyq_harness::{ExperimentConfig, HarnessError, Manifest, Report, Versions};

#[derive(Parser)]
#[command(name = "subnyq", version, about = "Sub-Nyquist array DOA/frequency experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single noise-free (or high-SNR) run: recover every source, scatter truth vs estimates.
    Identify(RunArgs),
    /// Monte Carlo RMSE of the spatial phases against CRB_sub / CRB_Ny over a sweep of K.
    Rmse(RunArgs),
    /// Bound-structure tables: block decoupling, equality case, diagonal ordering.
    Crb(RunArgs),
    /// Nyquist-rate synthesis through the multicoset sampler, checked against the aliasing model.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default `out/<command>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo trials (overrides the config).
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads (overrides the config; results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    /// Use the full-scale trial and snapshot counts (2000 trials, T_sub = 7000 / L).
    #[arg(long)]
    full_scale: bool,
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if args.full_scale {
        cfg.full_scale();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(workers) = args.workers {
        cfg.workers = Some(workers);
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(name: &str, args: &RunArgs) -> Result<bool, HarnessError> {
    let cfg = load(args)?;
    let report: Report = match name {
        "identify" => identify_report(&cfg, &run_identify(&cfg)?),
        "rmse" => rmse_report(&cfg, &run_rmse(&cfg)?),
        "crb" => crb_report(&cfg, &run_crb(&cfg)?),
        _ => validate_report(&cfg, &run_validate(&cfg)?),
    };
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    let manifest = Manifest {
        command: name.into(),
        seed: cfg.seed,
        trials: cfg.trials,
        workers: worker_count(&cfg),
        versions: Versions::current(),
        config: serde_json::to_value(&cfg).expect("config serialises"),
        outputs: Vec::new(),
        checks: Vec::new(),
        warnings: Vec::new(),
        passed: false,
    };
    let written = report.write(&dir, &manifest)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Identify(a) => ("identify", a),
        Command::Rmse(a) => ("rmse", a),
        Command::Crb(a) => ("crb", a),
        Command::Validate(a) => ("validate", a),
    };
    match run(name, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
