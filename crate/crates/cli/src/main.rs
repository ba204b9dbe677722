use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fvrom_cli::{load_case, run_pipeline, run_stage, CliError, Workspace};

/// Finite-volume full-order runs, POD and stabilised reduced-order models.
#[derive(Parser)]
#[command(name = "fvrom", version)]
struct Cli {
    /// Case file.
    #[arg(short, long, global = true, default_value = "case.toml")]
    case: PathBuf,
    /// Output directory; defaults to `runs/<case name>`.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Named scale from the case file's `[scales]` table (`desk` is the
    /// file body).
    #[arg(long, global = true)]
    scale: Option<String>,
    /// Override any case key, e.g. `--set rom.n_velocity=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and store the mesh.
    Mesh,
    /// Full-order training and reference runs.
    Hf,
    /// POD of the velocity fluctuations and the pressure.
    Pod,
    /// Supremizer enrichment and inf-sup constants.
    Supremizer,
    /// Project the reduced operators.
    Offline,
    /// Integrate the reduced models.
    Online,
    /// Errors, energies, eigenvalue and speedup tables.
    Compare,
    /// Run the stages from `from` (default: mesh) to compare.
    Run {
        #[arg(long)]
        from: Option<String>,
    },
    /// Print the resolved case.
    Show,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_case(&cli.case, cli.scale.as_deref(), &cli.overrides)?;
    let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(&config.name));
    let ws = Workspace::new(out, config);
    let stage = match cli.command {
        Command::Mesh => "mesh",
        Command::Hf => "hf",
        Command::Pod => "pod",
        Command::Supremizer => "supremizer",
        Command::Offline => "offline",
        Command::Online => "online",
        Command::Compare => "compare",
        Command::Run { from } => return run_pipeline(&ws, from.as_deref()),
        Command::Show => {
            print!("{}", ws.config.canonical());
            return Ok(());
        }
    };
    run_stage(&ws, stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
