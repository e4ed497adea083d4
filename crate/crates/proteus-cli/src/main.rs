use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

#[derive(Parser, Debug)]
#[command(name = "proteus", version, about = "Insertion-loss-aware Q/bitrate adaptation for photonic NoCs")]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter-crosstalk and total penalty over the Q grid.
    PenaltySweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated bitrates (Gb/s); defaults to the search space.
        #[arg(long, value_delimiter = ',')]
        br_list: Option<Vec<f64>>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Static laser power and per-loss (Q, BR) selection.
    Design {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-GI rule tables, binary and JSON.
    Rules {
        #[command(flatten)]
        common: Common,
        /// Design JSON from `design`; recomputed when omitted.
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one policy over the configured traffic.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "proteus")]
        policy: String,
        #[arg(long)]
        design: Option<PathBuf>,
        /// Directory of rule tables from `rules`.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run all four policies on one traffic stream and tabulate them.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        design: Option<PathBuf>,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Infeasible(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Infeasible(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type CmdResult = Result<(), Failure>;

pub fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

pub fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

pub struct Ctx {
    pub quiet: bool,
}

impl Ctx {
    pub fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn out_dir(out: Option<PathBuf>, cfg: &proteus::config::RunConfig) -> PathBuf {
    out.unwrap_or_else(|| cfg.output.dir.clone())
}

fn load(path: &Path) -> Result<proteus::config::RunConfig, Failure> {
    proteus::config::RunConfig::load(path).map_err(config_err)
}

fn dispatch(cli: Cli) -> CmdResult {
    let ctx = Ctx { quiet: cli.quiet };
    match cli.command {
        Command::PenaltySweep { common, br_list, out } => {
            let cfg = load(&common.config)?;
            commands::penalty_sweep(&ctx, &cfg, br_list, out.as_deref())
        }
        Command::Design { common, out } => {
            let cfg = load(&common.config)?;
            let dir = out_dir(out, &cfg);
            commands::design(&ctx, &cfg, &dir)
        }
        Command::Rules { common, design, out } => {
            let cfg = load(&common.config)?;
            let dir = out_dir(out, &cfg);
            commands::rules(&ctx, &cfg, design.as_deref(), &dir)
        }
        Command::Simulate { common, policy, design, rules, out } => {
            let cfg = load(&common.config)?;
            let policy = policy.parse().map_err(|e: String| config_err(anyhow!(e)))?;
            let dir = out_dir(out, &cfg);
            commands::simulate(&ctx, &cfg, policy, design.as_deref(), rules.as_deref(), &dir)
        }
        Command::Compare { common, design, rules, out } => {
            let cfg = load(&common.config)?;
            let dir = out_dir(out, &cfg);
            commands::compare(&ctx, &cfg, design.as_deref(), rules.as_deref(), &dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
