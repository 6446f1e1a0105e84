use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use orbitadv::harness::{self, ExperimentConfig, ExperimentKind};
use orbitadv::{Error, Result};

const SEED_VAR: &str = "ORBITADV_SEED";

#[derive(Parser)]
#[command(name = "orbitadv", version, about = "Adversarial search on rotation orbits of random conv nets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haar sampling sanity and the Lipschitz action bound.
    HaarTest(RunArgs),
    /// Empirical versus compositional kernel as channels grow.
    KernelCheck(RunArgs),
    /// Sign balance of random networks over the orbit.
    Balance(RunArgs),
    /// Adversarial search at a single tau.
    AdvSearch(RunArgs),
    /// Adversarial search over a sweep of tau.
    TheoremTrial(RunArgs),
    /// Blow-up of a set on the orbit against the isoperimetric bound.
    Isoperimetry(RunArgs),
    /// Concentration of Lipschitz functions on SO(d).
    Concentration(RunArgs),
    /// Feature separation and last-layer variance.
    Separate(RunArgs),
    /// Expected Gaussian maximum against the Sudakov trend.
    Sudakov(RunArgs),
    /// Coordinate tail on the sphere.
    SphereTail(RunArgs),
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate estimates against bounds from existing JSON summaries.
    Report {
        /// JSON files or directories holding them.
        #[arg(default_value = "runs")]
        paths: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the environment and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> Result<bool> {
    let (kind, args) = match command {
        Command::Validate { config } => {
            let cfg = harness::parse_config(&read(&config)?)?;
            cfg.validate()?;
            println!("{}: ok ({})", config.display(), cfg.kind);
            return Ok(true);
        }
        Command::Report { paths } => {
            let summaries = harness::load_summaries(&paths)?;
            let csv = harness::report_table(&summaries).to_csv()?;
            print!("{}", String::from_utf8_lossy(&csv));
            return Ok(summaries.iter().all(|(_, s)| s.all_pass()));
        }
        Command::HaarTest(a) => (ExperimentKind::HaarTest, a),
        Command::KernelCheck(a) => (ExperimentKind::KernelCheck, a),
        Command::Balance(a) => (ExperimentKind::Balance, a),
        Command::AdvSearch(a) => (ExperimentKind::AdvSearch, a),
        Command::TheoremTrial(a) => (ExperimentKind::TheoremTrial, a),
        Command::Isoperimetry(a) => (ExperimentKind::Isoperimetry, a),
        Command::Concentration(a) => (ExperimentKind::Concentration, a),
        Command::Separate(a) => (ExperimentKind::Separate, a),
        Command::Sudakov(a) => (ExperimentKind::Sudakov, a),
        Command::SphereTail(a) => (ExperimentKind::SphereTail, a),
    };
    let cfg = resolve(kind, &args)?;
    let out = PathBuf::from(&cfg.out);
    fs::create_dir_all(&out)?;
    let record = harness::run(&cfg)?;
    record.write(&out)?;
    for (name, status) in &record.summary.checks {
        println!("{:?}\t{name}", status);
    }
    println!("wrote {} and {}", record.csv_path(&out).display(), record.json_path(&out).display());
    Ok(record.summary.all_pass())
}

fn resolve(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => harness::parse_config_for(&read(path)?, kind)?,
        None => ExperimentConfig::with_kind(kind),
    };
    if let Ok(v) = std::env::var(SEED_VAR) {
        cfg.seed = v.trim().parse().map_err(|_| Error::Config {
            field: SEED_VAR.into(),
            line: None,
            message: format!("`{v}` is not an unsigned 64-bit integer"),
        })?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.display().to_string();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}
