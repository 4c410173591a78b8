//! `shearwave` command line: simulate, track, reconstruct, evaluate, and
//! the whole chain as `pipeline`.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::*;
use config::{RunConfig, TrackerKind};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "shearwave", version, about = "Shear-wave elastography simulation and reconstruction")]
pub struct Cli {
    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tracker(s), overrides `trackers` in the config.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub tracker: Vec<TrackerKind>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate truth displacements and the RF sequence.
    Simulate(Common),
    /// Track an RF stack.
    Track {
        #[command(flatten)]
        common: Common,
        /// RF stack, default `<out>/rf.swf`.
        #[arg(long)]
        rf: Option<PathBuf>,
    },
    /// Time-of-flight speed and modulus maps from a displacement stack.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Displacement stack, default `<out>/disp_<tracker>.swf`.
        #[arg(long)]
        disp: Option<PathBuf>,
    },
    /// Score a modulus map against ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Map to score, default `<out>/youngs_<tracker>.swf`.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Ground-truth map, default `<out>/truth_youngs.swf`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run every stage for each configured tracker.
    Pipeline(Common),
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if !common.tracker.is_empty() {
        cfg.trackers = common.tracker.clone();
    }
    Ok(cfg)
}

fn single_tracker(cfg: &RunConfig) -> CliResult<TrackerKind> {
    match cfg.trackers.as_slice() {
        [t] => Ok(*t),
        _ => Err(CliError::Usage("this stage takes exactly one tracker; pass --tracker".into())),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(common) => {
            cmd_simulate(&load(common)?)?;
        }
        Command::Track { common, rf } => {
            let cfg = load(common)?;
            let tracker = single_tracker(&cfg)?;
            let rf = rf.clone().unwrap_or_else(|| cfg.out_dir.join(RF_FILE));
            cmd_track(&cfg, &rf, tracker)?;
        }
        Command::Reconstruct { common, disp } => {
            let cfg = load(common)?;
            let disp = match disp {
                Some(p) => p.clone(),
                None => cfg.out_dir.join(disp_file(single_tracker(&cfg)?.name())),
            };
            cmd_reconstruct(&cfg, &disp, &label_of(&disp))?;
        }
        Command::Evaluate { common, map, truth } => {
            let cfg = load(common)?;
            let map = match map {
                Some(p) => p.clone(),
                None => cfg.out_dir.join(map_file(single_tracker(&cfg)?.name())),
            };
            let truth = truth.clone().unwrap_or_else(|| cfg.out_dir.join(TRUTH_MAP_FILE));
            cmd_evaluate(&cfg, &map, &truth, &label_of(&map))?;
        }
        Command::Pipeline(common) => {
            cmd_pipeline(&load(common)?)?;
        }
    }
    Ok(())
}
