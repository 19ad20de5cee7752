//! `clickseg`: one binary for importing datasets, simulated experiments,
//! serving live campaigns, training the mask ranker and reporting.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failure while running.

mod campaign;
mod error;
mod rank;
mod simulate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clickseg::annsim::{Allocation, Placement};
use clickseg::cropgeom::GeometryProfile;
use clickseg::refine::RefinerKind;
use serde::de::DeserializeOwned;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "clickseg",
    version,
    about = "Interactive instance segmentation with corrective clicks"
)]
struct Cli {
    /// Seed for box noise, simulated clicks, ranker bagging and splits.
    /// Overrides any seed in a config file; defaults to 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-instance work. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the procedural two/three-colour scene set (PNGs and manifest.json).
    Synth(campaign::SynthArgs),
    /// Create a campaign directory from a manifest.
    Import(campaign::ImportArgs),
    /// Run simulated k×r experiments over a manifest with ground truth.
    Simulate(simulate::SimArgs),
    /// Serve a campaign directory over HTTP.
    Serve(campaign::ServeArgs),
    /// Refine every answered instance of a campaign that is not being served.
    AdvanceRound(campaign::DataDirArgs),
    /// Train the mask-quality ranker on simulated samples.
    RankTrain(rank::TrainArgs),
    /// Score a campaign's current masks with a trained ranker.
    RankApply(rank::ApplyArgs),
    /// Write campaign reports: campaign.json, rounds.csv, quality.csv, time.csv.
    Report(campaign::ReportArgs),
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Globals {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Globals {
    pub fn workers_or(&self, fallback: usize) -> usize {
        self.workers.unwrap_or(fallback).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Blueprint,
    Campaign,
}

impl From<ProfileArg> for GeometryProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Blueprint => GeometryProfile::Blueprint,
            ProfileArg::Campaign => GeometryProfile::Campaign,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefinerArg {
    HealingOracle,
    Geodesic,
    BoxPrior,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    RegionCentre,
    RegionUniform,
    Boundary,
}

impl From<PlacementArg> for Placement {
    fn from(p: PlacementArg) -> Self {
        match p {
            PlacementArg::RegionCentre => Placement::RegionCentre,
            PlacementArg::RegionUniform => Placement::RegionUniform,
            PlacementArg::Boundary => Placement::Boundary,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AllocationArg {
    Deterministic,
    Sampled,
}

impl From<AllocationArg> for Allocation {
    fn from(a: AllocationArg) -> Self {
        match a {
            AllocationArg::Deterministic => Allocation::ProportionalDeterministic,
            AllocationArg::Sampled => Allocation::ProportionalSampled,
        }
    }
}

/// Refiner selection flags.
#[derive(Debug, Clone, Default, Args)]
pub struct RefinerArgs {
    /// Mask refiner. `remote` needs --endpoint.
    #[arg(long, value_enum)]
    pub refiner: Option<RefinerArg>,
    /// URL of a remote refinement service.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Timeout per remote call, milliseconds.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
}

impl RefinerArgs {
    /// The refiner chosen by flags, if any, pushing problems onto `problems`.
    pub fn resolve(&self, problems: &mut Vec<String>) -> Option<RefinerKind> {
        let kind = match (self.refiner, &self.endpoint) {
            (None, None) => return None,
            (Some(RefinerArg::Remote) | None, Some(endpoint)) => RefinerKind::Remote {
                endpoint: endpoint.clone(),
                timeout_ms: self.timeout_ms.unwrap_or(30_000),
                retries: 2,
                max_in_flight: 4,
            },
            (Some(RefinerArg::Remote), None) => {
                problems.push("--refiner remote needs --endpoint".into());
                return None;
            }
            (Some(_), Some(_)) => {
                problems.push("--endpoint only applies to --refiner remote".into());
                return None;
            }
            (Some(RefinerArg::HealingOracle), None) => RefinerKind::HealingOracle,
            (Some(RefinerArg::Geodesic), None) => RefinerKind::geodesic(),
            (Some(RefinerArg::BoxPrior), None) => RefinerKind::BoxPrior {
                params: Default::default(),
            },
        };
        if self.timeout_ms.is_some() && !matches!(kind, RefinerKind::Remote { .. }) {
            problems.push("--timeout-ms only applies to --refiner remote".into());
        }
        Some(kind)
    }
}

/// Reads a config file: `.json` as JSON, anything else as TOML.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let g = Globals {
        seed: cli.seed,
        workers: cli.workers,
    };
    if g.workers == Some(0) {
        eprintln!("{}", CliError::invalid("--workers must be >= 1"));
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Synth(a) => campaign::synth(a, g),
        Command::Import(a) => campaign::import(a, g),
        Command::Simulate(a) => simulate::run(a, g),
        Command::Serve(a) => campaign::serve(a, g),
        Command::AdvanceRound(a) => campaign::advance_round(a, g),
        Command::RankTrain(a) => rank::train(a, g),
        Command::RankApply(a) => rank::apply(a, g),
        Command::Report(a) => campaign::report(a, g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
