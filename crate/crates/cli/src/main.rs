use std::path::PathBuf;
use std::process::ExitCode;

use ccpi::Error;
use ccpi_cli::{cmd_compare, cmd_rollout, cmd_solve, cmd_sweep, error_json, exit_code, Context, Scale};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "ccpi", version, about = "Chance-constrained path-integral control")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file, or a preset name (`velocity`, `car`).
    #[arg(long, default_value = "velocity")]
    config: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// N = 2e4, 48x48 grid.
    #[arg(long, conflicts_with = "paper")]
    desk: bool,
    /// N = 1e5, 96x96 grid.
    #[arg(long)]
    paper: bool,
    /// `key.path=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Also write full trajectories.
    #[arg(long)]
    dump: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dual ascent for the configured risk tolerance.
    Solve(Common),
    /// Dual ascent over a list of risk tolerances.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        deltas: Vec<f64>,
    },
    /// Grid solution vs path-integral estimates at the probe states.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0.05,0.13")]
        etas: Vec<f64>,
    },
    /// Closed-loop rollouts under the path-integral policy.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// Multiplier; solved for when omitted.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

fn context(c: &Common) -> ccpi::Result<Context> {
    let scale = if c.paper {
        Some(Scale::Paper)
    } else if c.desk {
        Some(Scale::Desk)
    } else {
        None
    };
    Context::load(&c.config, scale, &c.set, c.seed, c.out_dir.clone(), c.dump)
}

fn run(cli: Cli) -> ccpi::Result<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Config {
                field: "--workers".into(),
                message: "must be at least 1".into(),
            });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::DegenerateInput(e.to_string()))?;
    }
    match &cli.command {
        Command::Solve(c) => cmd_solve(&context(c)?).map(|_| ()),
        Command::Sweep { common, deltas } => cmd_sweep(&context(common)?, deltas).map(|_| ()),
        Command::Compare { common, etas } => cmd_compare(&context(common)?, etas).map(|_| ()),
        Command::Rollout { common, eta, count } => cmd_rollout(&context(common)?, *eta, *count).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let obj = serde_json::json!({ "error": "usage", "message": e.to_string().trim() });
            eprintln!("{obj}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
