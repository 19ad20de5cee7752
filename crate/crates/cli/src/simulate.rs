//! `simulate`: k×r grids with a simulated annotator.
//!
//! Output layout under `--out`:
//!
//! ```text
//! aggregate.csv          one row per (cell, round)
//! <cell>/campaign.json   enough to re-prepare the instances (`report` reads it)
//! <cell>/manifest.json
//! <cell>/events.jsonl
//! <cell>/report.json     per-instance IoU and boundary F per round
//! <cell>/instances.csv
//! <cell>/samples.jsonl   ranker features with true IoU targets
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use clickseg::annsim::{Allocation, AnnotatorModel, Placement};
use clickseg::campaign::{
    load_manifest, prepare_manifest, replay, run_prepared, write_jsonl, DirImageStore, ExperimentReport, ExperimentSpec,
};
use clickseg::cropgeom::{ClickEncoding, GeometryProfile};
use clickseg::maskcore::Mask;
use clickseg::ranker::samples_from_states;
use clickseg::refine::RefinerKind;
use clickseg_server::CampaignConfig;
use serde::Deserialize;

use crate::error::CliError;
use crate::{create_dir, read_config, write_json, AllocationArg, Globals, PlacementArg, ProfileArg, RefinerArgs};

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Experiment file (TOML, or JSON by extension). Paths in it are relative
    /// to the file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest with ground truth for every instance.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory image paths are relative to; defaults to the manifest's directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid cells as CLICKSxROUNDS, comma separated, e.g. 3x3,1x9. Default 4x3.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<String>,
    /// Crop geometry. Default blueprint.
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    #[command(flatten)]
    pub refiner: RefinerArgs,
    /// Annotator preset the other annotator flags modify. Default blueprint.
    #[arg(long, value_enum)]
    pub annotator: Option<Preset>,
    /// Click noise, canvas pixels.
    #[arg(long, allow_negative_numbers = true)]
    pub click_sigma: Option<f64>,
    /// Error regions smaller than SIDE² pixels are ignored.
    #[arg(long, allow_negative_numbers = true)]
    pub min_side: Option<f64>,
    /// Where in an error region clicks go.
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    /// How the click budget is split across regions.
    #[arg(long, value_enum)]
    pub allocation: Option<AllocationArg>,
    /// Corner noise of the simulated input box, image pixels. Default 10.
    #[arg(long, allow_negative_numbers = true)]
    pub box_sigma: Option<f64>,
    /// Runs per cell with different annotator noise; extra runs are written
    /// as <cell>-r1, <cell>-r2, ...
    #[arg(long)]
    pub repeats: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Blueprint,
    Campaign,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AnnotatorFile {
    preset: Option<Preset>,
    click_sigma: Option<f64>,
    min_region_side: Option<f64>,
    placement: Option<Placement>,
    allocation: Option<Allocation>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimFile {
    manifest: Option<PathBuf>,
    image_root: Option<PathBuf>,
    out: Option<PathBuf>,
    grid: Vec<String>,
    profile: Option<GeometryProfile>,
    annotator: AnnotatorFile,
    refiner: Option<RefinerKind>,
    encoding: Option<ClickEncoding>,
    box_sigma: Option<f64>,
    repeats: Option<u32>,
    seed: Option<u64>,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Plan {
    pub manifest: PathBuf,
    pub image_root: PathBuf,
    pub out: PathBuf,
    pub cells: Vec<(String, ExperimentSpec)>,
    pub repeats: u32,
}

fn parse_cell(s: &str) -> Result<(usize, u32), String> {
    let bad = || format!("grid cell {s:?} is not CLICKSxROUNDS");
    let (k, r) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
    let k: usize = k.trim().parse().map_err(|_| bad())?;
    let r: u32 = r.trim().parse().map_err(|_| bad())?;
    if k == 0 || r == 0 {
        return Err(format!("grid cell {s:?}: clicks and rounds must be >= 1"));
    }
    Ok((k, r))
}

/// Merges the config file, flags and globals, listing every problem found.
pub fn plan(a: &SimArgs, g: Globals) -> Result<Plan, CliError> {
    let mut problems = Vec::new();
    let (file, base) = match &a.config {
        Some(p) => (
            read_config::<SimFile>(p)?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (SimFile::default(), PathBuf::new()),
    };
    let rel = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

    let manifest = a.manifest.clone().or_else(|| file.manifest.as_ref().map(rel));
    let manifest = match manifest {
        Some(m) if m.is_file() => m,
        Some(m) => {
            problems.push(format!("manifest {} does not exist", m.display()));
            m
        }
        None => {
            problems.push("a manifest is required (--manifest or `manifest` in the config)".into());
            PathBuf::new()
        }
    };
    let image_root = a
        .image_root
        .clone()
        .or_else(|| file.image_root.as_ref().map(rel))
        .unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let image_root = if image_root.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        image_root
    };
    if !image_root.is_dir() {
        problems.push(format!("image root {} is not a directory", image_root.display()));
    }
    let out = a.out.clone().or_else(|| file.out.as_ref().map(rel)).unwrap_or_else(|| {
        problems.push("an output directory is required (--out or `out` in the config)".into());
        PathBuf::new()
    });

    let grid = if !a.grid.is_empty() {
        a.grid.clone()
    } else if !file.grid.is_empty() {
        file.grid.clone()
    } else {
        vec!["4x3".to_string()]
    };
    let mut cells = Vec::new();
    for c in &grid {
        match parse_cell(c) {
            Ok(kr) if cells.iter().any(|(_, x)| *x == kr) => problems.push(format!("grid cell {c:?} is listed twice")),
            Ok(kr) => cells.push((format!("{}x{}", kr.0, kr.1), kr)),
            Err(e) => problems.push(e),
        }
    }

    let preset = a.annotator.or(file.annotator.preset).unwrap_or(Preset::Blueprint);
    let mut annotator = match preset {
        Preset::Blueprint => AnnotatorModel::blueprint(),
        Preset::Campaign => AnnotatorModel::campaign(),
    };
    if let Some(s) = a.click_sigma.or(file.annotator.click_sigma) {
        annotator.click_sigma = s;
    }
    if let Some(s) = a.min_side.or(file.annotator.min_region_side) {
        annotator.min_region_side = s;
    }
    if let Some(p) = a.placement.map(Placement::from).or(file.annotator.placement) {
        annotator.placement = p;
    }
    if let Some(al) = a.allocation.map(Allocation::from).or(file.annotator.allocation) {
        annotator.allocation = al;
    }

    let mut spec = ExperimentSpec::new(1, 1);
    spec.annotator = annotator;
    spec.profile = a.profile.map(Into::into).or(file.profile).unwrap_or_default();
    if let Some(r) = a.refiner.resolve(&mut problems).or(file.refiner) {
        spec.refiner = r;
    }
    spec.encoding = file.encoding;
    if let Some(s) = a.box_sigma.or(file.box_sigma) {
        spec.box_sigma = s;
    }
    spec.seed = g.seed.or(file.seed).unwrap_or(0);
    spec.manifest = Some(manifest.display().to_string());
    for p in spec.problems() {
        if !p.starts_with("clicks_per_round") && !p.starts_with("rounds") {
            problems.push(p);
        }
    }
    let repeats = a.repeats.or(file.repeats).unwrap_or(1);
    if repeats == 0 {
        problems.push("repeats must be >= 1".into());
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let cells = cells
        .into_iter()
        .map(|(name, (k, r))| {
            let mut s = spec.clone();
            s.clicks_per_round = k;
            s.rounds = r;
            (name, s)
        })
        .collect();
    Ok(Plan {
        manifest,
        image_root,
        out,
        cells,
        repeats,
    })
}

pub fn run(a: SimArgs, g: Globals) -> Result<(), CliError> {
    let plan = plan(&a, g)?;
    let failed = execute(&plan, g.workers_or(1))?;
    if failed > 0 {
        return Err(CliError::runtime(format!(
            "{failed} instance runs failed; see report.json"
        )));
    }
    Ok(())
}

/// Runs every cell and writes the outputs. Returns the number of failed
/// instance runs.
pub fn execute(plan: &Plan, workers: usize) -> Result<usize, CliError> {
    let manifest = load_manifest(&plan.manifest)?;
    let missing: Vec<String> = manifest
        .instances
        .iter()
        .filter(|i| !i.has_gt())
        .map(|i| format!("instance {} has no ground truth", i.id))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Validation(missing));
    }
    let image_root = std::fs::canonicalize(&plan.image_root)?;
    let store = DirImageStore::new(&image_root);
    let Some((_, first)) = plan.cells.first() else {
        return Err(CliError::invalid("empty grid"));
    };
    // preparation does not depend on k or r
    let prepared = prepare_manifest(&manifest, &store, first, workers)?;
    let gt: BTreeMap<String, Mask> = prepared
        .iter()
        .filter_map(|p| p.gt.clone().map(|g| (p.meta.id.clone(), g)))
        .collect();

    let out = create_dir(&plan.out)?;
    let mut agg = csv::Writer::from_path(out.join("aggregate.csv"))?;
    agg.write_record(ExperimentReport::AGGREGATE_HEADER)?;
    let mut failed = 0;
    for (cell, spec) in &plan.cells {
        for rep in 0..plan.repeats {
            let name = if rep == 0 {
                cell.clone()
            } else {
                format!("{cell}-r{rep}")
            };
            let mut spec = spec.clone();
            spec.annotator.rng_seed = u64::from(rep);
            let (report, events) = run_prepared(&spec, &prepared, workers)?;
            report.write_aggregate_csv(&name, &mut agg)?;
            failed += report.failures.len();

            let dir = create_dir(&out.join(&name))?;
            let mut cfg = CampaignConfig::new(name.clone(), image_root.clone());
            cfg.profile = spec.profile;
            cfg.clicks_per_round = spec.clicks_per_round;
            cfg.rounds = spec.rounds;
            cfg.refiner = spec.refiner.clone();
            cfg.encoding = spec.encoding;
            cfg.seed = spec.seed;
            cfg.box_sigma = spec.box_sigma;
            write_json(&dir.join("campaign.json"), &cfg)?;
            write_json(&dir.join("manifest.json"), &manifest)?;
            write_json(&dir.join("report.json"), &report)?;
            write_jsonl(dir.join("events.jsonl"), &events)?;
            let mut inst = csv::Writer::from_path(dir.join("instances.csv"))?;
            report.write_instance_csv(&mut inst)?;
            inst.flush()?;

            let samples = samples_from_states(&replay(&events)?, &gt)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("samples.jsonl"))?);
            for s in &samples {
                serde_json::to_writer(&mut f, s)?;
                f.write_all(b"\n")?;
            }
            f.flush()?;
            eprintln!(
                "{name}: final mIoU {:.4} over {} instances, {} samples, {} failures",
                report.final_miou(),
                report.instances.len(),
                samples.len(),
                report.failures.len()
            );
        }
    }
    agg.flush()?;
    Ok(failed)
}
