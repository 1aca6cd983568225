use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subelliptic_cli::{cmd_energy, cmd_flow, cmd_verify, CliError, RunConfig, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "subelliptic", version, about = "Subelliptic harmonic and biharmonic maps on the Heisenberg group")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// `key = value` configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the identity checks and write report.json / report.txt.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Restrict to one check id; repeatable.
        #[arg(long = "check")]
        checks: Vec<String>,
    },
    /// Run the bienergy descent flow and write trace.csv / final.hfield.
    Flow {
        #[command(flatten)]
        common: Common,
    },
    /// Print E1, E2, |tau| and |BH| of a map as JSON.
    Energy {
        #[command(flatten)]
        common: Common,
        /// `hfield v1` map; the configured preset is used when omitted.
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Verify { common, checks } => {
            let cfg = load(&common)?;
            let outcome = cmd_verify(&cfg, &checks, &cfg.out)?;
            print!("{}", outcome.report.to_text());
            Ok(if outcome.report.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Flow { common } => {
            let cfg = load(&common)?;
            let summary = cmd_flow(&cfg, &cfg.out)?;
            let last = summary.trace.records.last();
            println!(
                "{:?} after {} steps; e2b {} bh_l2 {}; wrote {} and {}",
                summary.status,
                summary.steps,
                last.map(|r| format!("{:.6e}", r.e2b)).unwrap_or_default(),
                last.map(|r| format!("{:.6e}", r.bh_l2)).unwrap_or_default(),
                summary.trace_path.display(),
                summary.map_path.display()
            );
            Ok(summary.exit_code())
        }
        Command::Energy { common, map } => {
            let cfg = load(&common)?;
            println!("{}", cmd_energy(&cfg, map.as_deref())?.to_json());
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
