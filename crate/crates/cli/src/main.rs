mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "jetmarch", version, about = "Quasipotentials, WKB prefactors and escape times for planar SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; its values replace the defaults.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `-s grid.n=257` or
    /// `-s field.name=maier-stein`. Applied after the file; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Root directory for all output; `output.dir` is resolved against it.
    #[arg(long, env = "JETMARCH_OUT", default_value = ".", global = true)]
    out_root: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for the quasipotential on one grid.
    Solve {
        /// Shorthand for `-s grid.n=N`.
        #[arg(short)]
        n: Option<usize>,
        /// Shorthand for `-s solver.method=M`.
        #[arg(short, long)]
        method: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Convergence sweep over grid sizes and methods with power-law fits.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Maier-Stein pipeline: quasipotential to the saddle, prefactor, escape times.
    MaierStein {
        /// Shorthand for `-s maier_stein.beta=B`.
        #[arg(long)]
        beta: Option<f64>,
        /// Also run TPT at every ε.
        #[arg(long)]
        tpt: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Transition path theory rates for the Maier-Stein field.
    Tpt {
        /// Shorthand for `-s tpt.beta=B`.
        #[arg(long)]
        beta: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the binned reversed stencils as CSV.
    StencilDump {
        #[command(flatten)]
        common: Common,
    },
    /// Solve, then trace the minimum action path to `trace.target`.
    TraceMap {
        /// Shorthand for `-s trace.target=[X, Y]`.
        #[arg(long, num_args = 2, value_names = ["X", "Y"], allow_negative_numbers = true)]
        target: Option<Vec<f64>>,
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, extra) = match &cli.command {
        Command::Solve { n, method, common } => {
            let mut extra = vec![];
            if let Some(n) = n {
                extra.push(format!("grid.n={n}"));
            }
            if let Some(m) = method {
                extra.push(format!("solver.method=\"{m}\""));
            }
            (common, extra)
        }
        Command::MaierStein { beta, tpt, common } => {
            let mut extra: Vec<String> = beta.iter().map(|b| format!("maier_stein.beta={b:?}")).collect();
            if *tpt {
                extra.push("maier_stein.tpt=true".into());
            }
            (common, extra)
        }
        Command::Tpt { beta, common } => (common, beta.iter().map(|b| format!("tpt.beta={b:?}")).collect()),
        Command::TraceMap { target, common } => (
            common,
            target.iter().map(|t| format!("trace.target=[{:?}, {:?}]", t[0], t[1])).collect(),
        ),
        Command::Sweep { common } | Command::StencilDump { common } => (common, vec![]),
    };
    let overrides: Vec<String> = common.overrides.iter().cloned().chain(extra).collect();
    let cfg = match RunConfig::load(common.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = common.out_root.join(&cfg.output.dir);
    let result = match cli.command {
        Command::Solve { .. } => commands::solve(&cfg, &out),
        Command::Sweep { .. } => commands::sweep(&cfg, &out),
        Command::MaierStein { .. } => commands::maier_stein(&cfg, &out),
        Command::Tpt { .. } => commands::tpt(&cfg, &out),
        Command::StencilDump { .. } => commands::stencil_dump(&cfg, &out),
        Command::TraceMap { .. } => commands::trace_map(&cfg, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
