//! The `metaforge` command line: precompute coordinates, fit targets,
//! discover meta-handles, sample, evaluate, and re-encode bundles.

pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod records;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::FitMode;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "metaforge", version, about = "Learned deformation subspaces for triangle meshes")]
pub struct Cli {
    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides one configuration key, e.g. `--set w_lap=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select control points, solve for coordinates, and write a bundle.
    Precompute {
        mesh: PathBuf,
        /// JSON with `control_indices` and an n×c `coordinates` array, used
        /// instead of the biharmonic solve.
        #[arg(long)]
        coords_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Write the JSON encoding.
        #[arg(long)]
        text: bool,
    },
    /// Deform the bundle's source toward one target mesh.
    Fit {
        bundle: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum, default_value = "full")]
        mode: FitMode,
        /// Deformed mesh (OBJ).
        #[arg(long)]
        out: PathBuf,
        /// Fit record; defaults to the output path with a `.json` extension.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Learn meta-handles and ranges from a directory of target meshes.
    Discover {
        bundle: PathBuf,
        targets: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the output path with a `.report.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        text: bool,
    },
    /// Write random deformations from the bundle's subspace.
    Sample {
        bundle: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Replay one coefficient record to `replay.obj` instead of sampling.
        #[arg(long)]
        coeffs: Option<PathBuf>,
    },
    /// Coverage, MMD and the Chamfer table between two mesh directories.
    Eval {
        generated: PathBuf,
        reference: PathBuf,
        /// Record file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-encode a bundle.
    Export {
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        text: bool,
    },
}

/// Caps the worker pool at `METAFORGE_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var("METAFORGE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("METAFORGE_THREADS must be a positive integer, got {value:?}")))?;
    // A pool that already exists (repeated calls in one process) is kept.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match cli.command {
        Command::Precompute {
            mesh,
            coords_file,
            out,
            text,
        } => commands::precompute(&mesh, coords_file.as_deref(), &out, text, &config),
        Command::Fit {
            bundle,
            target,
            mode,
            out,
            record,
        } => commands::fit(&bundle, &target, mode, &out, record.as_deref(), &config),
        Command::Discover {
            bundle,
            targets,
            out,
            report,
            text,
        } => commands::discover(&bundle, &targets, &out, report.as_deref(), text, &config),
        Command::Sample {
            bundle,
            count,
            out,
            coeffs,
        } => commands::sample(&bundle, count, &out, coeffs.as_deref(), &config),
        Command::Eval {
            generated,
            reference,
            out,
        } => commands::eval(&generated, &reference, out.as_deref(), &config).map(|_| ()),
        Command::Export { bundle, out, text } => commands::export(&bundle, &out, text),
    }
}
