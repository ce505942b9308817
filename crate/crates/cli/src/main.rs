mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;
use output::Outcome;

/// Smoluchowski and dynamical density functional experiments in one dimension.
#[derive(Parser)]
#[command(name = "ddft-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the one-body Smoluchowski solver.
    Simulate(Common),
    /// Run the N-body solver and check the reduced hierarchy under refinement.
    NbodyVerify(Common),
    /// Brownian dynamics sampling with density and current estimates.
    Bd(Common),
    /// Build the constant-current loophole potential and verify it against the base run.
    Loophole(Common),
    /// Compare two drives order by order in time.
    UniquenessProbe(Common),
    /// Recover the external force from density and current frames.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Frame dump to invert (defaults to a forward run of the scenario).
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Print the resolved scenario as TOML.
    Config {
        /// Built-in scenario name.
        scenario: Option<String>,
        /// Scenario file (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct Common {
    /// Built-in scenario name.
    scenario: Option<String>,
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "ddft-forge-out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not print the report.
    #[arg(long)]
    quiet: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DDFT_FORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Usage(format!("DDFT_FORGE_THREADS must be a positive integer, got '{v}'"))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size the thread pool: {e}")))
}

fn execute(command: &Command) -> Result<bool, CliError> {
    let (name, common, target) = match command {
        Command::Config { scenario, config, seed } => {
            print!("{}", config::render(&config::load(config.as_deref(), scenario.as_deref(), *seed)?)?);
            return Ok(true);
        }
        Command::Simulate(c) => ("simulate", c, None),
        Command::NbodyVerify(c) => ("nbody-verify", c, None),
        Command::Bd(c) => ("bd", c, None),
        Command::Loophole(c) => ("loophole", c, None),
        Command::UniquenessProbe(c) => ("uniqueness-probe", c, None),
        Command::Invert { common, target } => ("invert", common, target.as_deref()),
    };
    configure_threads()?;
    let s = config::load(common.config.as_deref(), common.scenario.as_deref(), common.seed)?;
    let out: &Path = &common.out;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("scenario.toml"), config::render(&s)?)?;

    let mut o = Outcome::new(name, &s.name);
    let result = match command {
        Command::Simulate(_) => commands::simulate(&s, out, &mut o),
        Command::NbodyVerify(_) => commands::nbody_verify(&s, out, &mut o),
        Command::Bd(_) => commands::bd(&s, out, &mut o),
        Command::Loophole(_) => commands::loophole(&s, out, &mut o),
        Command::UniquenessProbe(_) => commands::uniqueness_probe(&s, out, &mut o),
        Command::Invert { .. } => commands::invert(&s, target, out, &mut o),
        Command::Config { .. } => unreachable!("handled above"),
    };
    match result {
        Ok(()) => {}
        Err(e) if e.exit_code() == 1 => return Err(e),
        Err(e) => o.fail_with(e.to_string()),
    }
    o.write(out)?;
    if !common.quiet {
        print!("{}", o.report());
    }
    Ok(o.passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("ddft-forge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
