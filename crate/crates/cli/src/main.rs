use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rewag_core::embed::precompute_sat_store;
use rewag_core::runner::{
    build_trajectory, build_world, report, run_with, write_outputs, ConfigError, RunConfig,
    RunError,
};

#[derive(Parser)]
#[command(
    name = "rewag",
    version,
    about = "Particle-filter geolocalization on a synthetic landmark world"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a landmark world and write it as an RWLD file.
    GenWorld {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Generate a ground-truth trajectory CSV.
    GenTraj {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Precompute the satellite embedding store (RWSS) for the world.
    Precompute {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the filter and print the summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Metrics CSV path (overrides output.trace).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Summary path (overrides output.summary).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Summarize a metrics CSV.
    Report {
        trace: PathBuf,
        /// Convergence threshold in meters.
        #[arg(long, default_value_t = 60.0)]
        threshold: f64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set filter.count=5000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 picks the default).
    #[arg(long)]
    threads: Option<usize>,
    /// Similarity backend: oracle or safa.
    #[arg(long)]
    backend: Option<String>,
    /// Pose mode: full, heading_only or none.
    #[arg(long)]
    pose_mode: Option<String>,
    /// Particle count.
    #[arg(long)]
    particles: Option<usize>,
    /// Number of trajectory steps.
    #[arg(long)]
    steps: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, ConfigError> {
        let mut o = self.overrides.clone();
        let mut push = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push(format!("{key}={v}"));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("threads", self.threads.map(|v| v.to_string()));
        push(
            "similarity.backend",
            self.backend.as_ref().map(|v| format!("{v:?}")),
        );
        push(
            "similarity.pose_mode",
            self.pose_mode.as_ref().map(|v| format!("{v:?}")),
        );
        push("filter.count", self.particles.map(|v| v.to_string()));
        push("trajectory.steps", self.steps.map(|v| v.to_string()));
        match &self.config {
            Some(path) => RunConfig::load_with_overrides(path, &o),
            None => RunConfig::from_toml_with_overrides("", &o, Path::new(".")),
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            RunError::Mismatch(_) => Failure::Validation(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenWorld { common, out } => {
            let cfg = common.load()?;
            let world = build_world(&cfg)?;
            world.save(&out).map_err(runtime)?;
            println!("wrote {} landmarks to {}", world.len(), out.display());
        }
        Command::GenTraj { common, out } => {
            let cfg = common.load()?;
            let traj = build_trajectory(&cfg)?;
            traj.save(&out).map_err(runtime)?;
            println!("wrote {} steps to {}", traj.len(), out.display());
        }
        Command::Precompute { common, out } => {
            let cfg = common.load()?;
            let world = build_world(&cfg)?;
            let store = precompute_sat_store(&world, &cfg.embed.params()).map_err(runtime)?;
            store.save(&out).map_err(runtime)?;
            println!(
                "wrote {} tile embeddings of dimension {} to {}",
                store.len(),
                store.dim(),
                out.display()
            );
        }
        Command::Run {
            common,
            trace,
            summary,
        } => {
            let mut cfg = common.load()?;
            if trace.is_some() {
                cfg.output.trace = trace;
            }
            if summary.is_some() {
                cfg.output.summary = summary;
            }
            let world = build_world(&cfg)?;
            let traj = build_trajectory(&cfg)?;
            let result = run_with(&cfg, &world, &traj)?;
            write_outputs(&cfg, &result)?;
            print!("{}", result.summary());
        }
        Command::Report { trace, threshold } => {
            if !(threshold > 0.0 && threshold.is_finite()) {
                return Err(Failure::Validation(format!(
                    "threshold must be positive, got {threshold}"
                )));
            }
            let text = fs::read_to_string(&trace)
                .map_err(|e| runtime(format!("cannot read {}: {e}", trace.display())))?;
            let s = report(&text, threshold).map_err(|e| Failure::Validation(e.to_string()))?;
            print!("{s}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
