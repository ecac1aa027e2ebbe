use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use doublon_core::experiment::{run_to_dir, sweep, ExperimentConfig};
use doublon_core::Error;

/// Exact diagonalization of the doublon Bose-Hubbard model.
#[derive(Debug, Parser)]
#[command(name = "doublon-ed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a config once per value of a scalar coupling.
    Sweep {
        config: PathBuf,
        /// One of J, t, P, U, V.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; may be empty.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Disorder seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the Hamiltonian in coordinate format.
    #[arg(long)]
    dump_matrix: bool,
}

const DEFAULT_OUT: &str = "doublon-out";

fn parse_values(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad sweep value {s:?}: {e}"))))
        .collect()
}

fn load(config: &Path, common: &Common) -> Result<(ExperimentConfig, PathBuf), Error> {
    let mut c = ExperimentConfig::from_path(config)?;
    if let Some(seed) = common.seed {
        c = c.with_seed(seed);
    }
    let out = common.out.clone().or_else(|| c.output_dir.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((c, out))
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Run { config, common } => {
            let (c, out) = load(config, common)?;
            run_to_dir(&c, &out, common.dump_matrix)?;
            println!("{}", out.join("result.json").display());
        }
        Command::Sweep { config, axis, values, common } => {
            let values = parse_values(values)?;
            let (c, out) = load(config, common)?;
            let bundles = sweep(&c, axis, &values, &out, common.dump_matrix)?;
            println!("{} ({} points)", out.join("sweep.json").display(), bundles.len());
        }
    }
    Ok(())
}

fn common(cli: &Cli) -> &Common {
    match &cli.command {
        Command::Run { common, .. } | Command::Sweep { common, .. } => common,
    }
}

fn report(err: &Error, out: Option<&Path>) {
    let body = serde_json::json!({
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    });
    eprintln!("{body}");
    if let Some(dir) = out {
        if std::fs::create_dir_all(dir).is_ok() {
            let _ = std::fs::write(dir.join("error.json"), format!("{body:#}\n"));
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = common(&cli).threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            report(&Error::Config(format!("cannot start {n} threads: {e}")), None);
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let c = common(&cli);
            let out = c.out.clone().or_else(|| {
                let config = match &cli.command {
                    Command::Run { config, .. } | Command::Sweep { config, .. } => config,
                };
                ExperimentConfig::from_path(config).ok().and_then(|c| c.output_dir)
            });
            report(&e, out.as_deref());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
