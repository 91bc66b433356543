use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use elmarket_core::MarketModel;

use crate::config::{Config, Overrides, Preset};
use crate::error::{exit, Result, SimError};
use crate::study::{run_single, run_sweep, SweepKind};
use crate::verify::run_checks;

#[derive(Debug, Parser)]
#[command(name = "elmarket", version, about = "Futures and spot electricity market equilibria under risk aversion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one configuration.
    Solve(RunArgs),
    /// Solve once per RES capacity level.
    SweepRes(RunArgs),
    /// Solve once per risk weight phi.
    SweepPhi(RunArgs),
    /// Run the oracle and invariant checks on a configuration.
    Verify(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Study configuration (TOML).
    pub config: PathBuf,
    #[arg(long, value_parser = parse_model)]
    pub model: Option<MarketModel>,
    #[arg(long, value_enum)]
    pub conduct: Option<ConductArg>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Scenario count.
    #[arg(long)]
    pub scenarios: Option<usize>,
    /// Scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ConductArg {
    Cournot,
    Perfect,
}

fn parse_model(s: &str) -> std::result::Result<MarketModel, String> {
    s.parse::<MarketModel>().map_err(|e| e.to_string())
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model,
            conduct: self.conduct.map(|c| match c {
                ConductArg::Cournot => Preset::Cournot,
                ConductArg::Perfect => Preset::Perfect,
            }),
            phi: self.phi,
            alpha: self.alpha,
            scenarios: self.scenarios,
            seed: self.seed,
            out: self.out.clone(),
        }
    }

    pub fn load(&self) -> Result<Config> {
        Ok(Config::load(&self.config)?.with_overrides(&self.overrides())?)
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Solve(args) => {
            let cfg = args.load()?;
            let cfg = cfg.clone().resolve_count(cfg.risk.phi > 0.0);
            let written = run_single(&cfg)?;
            print_files(&written.files);
            Ok(())
        }
        Command::SweepRes(args) | Command::SweepPhi(args) => {
            let kind = match cli.command {
                Command::SweepRes(_) => SweepKind::Res,
                _ => SweepKind::Phi,
            };
            let result = run_sweep(&args.load()?, kind)?;
            print_files(&result.written.files);
            let failed = result.points.iter().filter(|p| p.headline.is_none()).count();
            if failed > 0 {
                return Err(SimError::Partial { failed, total: result.points.len() });
            }
            Ok(())
        }
        Command::Verify(args) => {
            let cfg = args.load()?;
            let cfg = cfg.clone().resolve_count(cfg.risk.phi > 0.0);
            let checks = run_checks(&cfg)?;
            for c in &checks {
                let verdict = if c.passed { "PASS" } else { "FAIL" };
                println!("{verdict} {}: worst {:.3e} (tolerance {:.1e}, {} cases)", c.name, c.worst, c.tolerance, c.cases);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(SimError::Verification { failed, total: checks.len() });
            }
            Ok(())
        }
    }
}

/// Parses arguments, runs, reports, and maps the outcome to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::INVALID_INPUT } else { exit::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
