use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, CheckOptions};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "kaflab", version, about = "Natural KLMS experiments and their theoretical performance model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo learning curve of the configured filter.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `monte_carlo.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Theoretical transient curve, steady state and stability verdicts.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a model file written by an earlier `analyze`.
        #[arg(long)]
        moments: Option<PathBuf>,
        /// Directory for cached input-only moments.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Overlays a simulated and a theoretical curve.
    Compare {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        theory: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form kernel moments against Gaussian sampling.
    MomentsCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: usize,
        /// Kernel width multiplier applied to the sampler only.
        #[arg(long, default_value_t = 1.0)]
        sigma_scale: f64,
        /// Number of random fourth-moment entries.
        #[arg(long, default_value_t = 20)]
        entries: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multiplications per iteration, full against selective update.
    Complexity {
        /// Input dimension.
        #[arg(long = "L")]
        input_dim: u64,
        #[arg(long)]
        r_max: u64,
        #[arg(long)]
        s_n: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { config, out, seed } => commands::simulate(&config, &out, seed),
        Command::Analyze {
            config,
            out,
            moments,
            cache,
        } => commands::analyze(&config, &out, moments.as_deref(), cache.as_deref()),
        Command::Compare { sim, theory, out } => commands::compare(&sim, &theory, &out),
        Command::MomentsCheck {
            config,
            samples,
            sigma_scale,
            entries,
            seed,
            out,
        } => commands::moments_check(
            &config,
            CheckOptions {
                samples,
                entries,
                sigma_scale,
                seed: 0,
            },
            seed,
            out.as_deref(),
        ),
        Command::Complexity {
            input_dim,
            r_max,
            s_n,
            out,
        } => commands::complexity(input_dim, r_max, s_n, out.as_deref()),
    }
}
