//! Subcommands over campaign directories: synth, import, serve,
//! advance-round and report.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use clap::Args;
use clickseg::analytics::CampaignReport;
use clickseg::campaign::{load_manifest, replay};
use clickseg::synth::{write_dataset, SceneParams};
use clickseg_server::{
    create_campaign, open_campaign, AppState, CampaignConfig, CampaignFiles, Clock, ServerConfig, SystemClock,
};

use crate::error::CliError;
use crate::{create_dir, write_json, Globals, ProfileArg, RefinerArgs};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives images/ and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes, one instance each.
    #[arg(long, default_value_t = 200)]
    pub count: usize,
}

pub fn synth(a: SynthArgs, g: Globals) -> Result<(), CliError> {
    if a.count == 0 {
        return Err(CliError::invalid("--count must be >= 1"));
    }
    let m = write_dataset(&a.out, a.count, g.seed.unwrap_or(0), &SceneParams::default())?;
    println!("wrote {} scenes to {}", m.instances.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// Manifest JSON listing images and instances.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Campaign directory to create.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Campaign name; defaults to the directory name.
    #[arg(long)]
    pub name: Option<String>,
    /// Directory image paths are relative to; defaults to the manifest's directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Crop geometry and size filter.
    #[arg(long, value_enum, default_value = "campaign")]
    pub profile: ProfileArg,
    /// Clicks allowed per round.
    #[arg(long, default_value_t = 4)]
    pub clicks: usize,
    /// Number of rounds.
    #[arg(long, default_value_t = 3)]
    pub rounds: u32,
    #[command(flatten)]
    pub refiner: RefinerArgs,
    /// Class-specific instructions shown with each task, as CLASS=TEXT. Repeatable.
    #[arg(long = "policy", value_name = "CLASS=TEXT")]
    pub policies: Vec<String>,
    /// Instructions for classes without their own policy.
    #[arg(long)]
    pub default_policy: Option<String>,
}

pub fn import(a: ImportArgs, g: Globals) -> Result<(), CliError> {
    let mut problems = Vec::new();
    let refiner = a.refiner.resolve(&mut problems);
    let mut policies = BTreeMap::new();
    for p in &a.policies {
        match p.split_once('=') {
            Some((class, text)) if !class.trim().is_empty() => {
                policies.insert(class.trim().to_string(), text.to_string());
            }
            _ => problems.push(format!("--policy {p:?} is not CLASS=TEXT")),
        }
    }
    if !a.manifest.is_file() {
        problems.push(format!("manifest {} does not exist", a.manifest.display()));
    }
    let root = a
        .image_root
        .clone()
        .unwrap_or_else(|| a.manifest.parent().map(PathBuf::from).unwrap_or_default());
    let root = match std::fs::canonicalize(if root.as_os_str().is_empty() {
        PathBuf::from(".")
    } else {
        root.clone()
    }) {
        Ok(r) => r,
        Err(e) => {
            problems.push(format!("image root {}: {e}", root.display()));
            root
        }
    };
    let name = a.name.clone().unwrap_or_else(|| {
        a.data_dir
            .file_name()
            .map_or_else(|| "campaign".into(), |n| n.to_string_lossy().into_owned())
    });
    let mut cfg = CampaignConfig::new(name, root);
    cfg.profile = a.profile.into();
    cfg.clicks_per_round = a.clicks;
    cfg.rounds = a.rounds;
    cfg.seed = g.seed.unwrap_or(0);
    cfg.policies = policies;
    if let Some(r) = refiner {
        cfg.refiner = r;
    }
    if let Some(d) = a.default_policy {
        cfg.default_policy = d;
    }
    problems.extend(cfg.spec().problems());
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    let manifest = load_manifest(&a.manifest)?;
    let report = create_campaign(&a.data_dir, &cfg, &manifest, g.workers_or(1), SystemClock.now_ms())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!(
        "imported {} instances into {} ({} filtered by size, {} rejected)",
        report.accepted,
        a.data_dir.display(),
        report.filtered.len(),
        report.rejects.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Server settings file (TOML, or JSON by extension). CLICKSEG_PORT and
    /// CLICKSEG_DATA_DIR override it; flags override both.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Campaign directory created by `import`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Address to bind.
    #[arg(long)]
    pub host: Option<String>,
    /// Port to bind; 0 picks a free one.
    #[arg(long)]
    pub port: Option<u16>,
    /// Seconds before an unanswered task is offered to someone else.
    #[arg(long)]
    pub lease_secs: Option<u64>,
    /// Refine each answer as it arrives instead of per round.
    #[arg(long)]
    pub immediate_refine: bool,
}

pub fn serve(a: ServeArgs, g: Globals) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => ServerConfig::load(p)?,
        None => ServerConfig::default(),
    };
    cfg.apply_env(|k| std::env::var(k).ok())?;
    if let Some(d) = a.data_dir {
        cfg.data_dir = d;
    }
    if let Some(h) = a.host {
        cfg.host = h;
    }
    if let Some(p) = a.port {
        cfg.port = p;
    }
    if let Some(l) = a.lease_secs {
        cfg.lease_secs = l;
    }
    cfg.immediate_refine |= a.immediate_refine;
    cfg.workers = g.workers_or(cfg.workers);
    if cfg.lease_secs == 0 {
        return Err(CliError::invalid("lease_secs must be >= 1"));
    }
    let clock = Arc::new(SystemClock);
    let svc = open_campaign(&cfg.data_dir, &cfg, clock.now_ms())?;
    let name = svc.name().to_string();
    let state = AppState::new(svc, clock).with_refine_workers(cfg.workers);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((cfg.host.as_str(), cfg.port))
            .await
            .map_err(|e| CliError::runtime(format!("bind {}:{}: {e}", cfg.host, cfg.port)))?;
        eprintln!("serving campaign {name} on http://{}", listener.local_addr()?);
        clickseg_server::serve(listener, state).await?;
        Ok(())
    })
}

#[derive(Debug, Args)]
pub struct DataDirArgs {
    /// Campaign directory. Must not be served at the same time.
    #[arg(long)]
    pub data_dir: PathBuf,
}

pub fn advance_round(a: DataDirArgs, g: Globals) -> Result<(), CliError> {
    let cfg = ServerConfig {
        data_dir: a.data_dir.clone(),
        workers: g.workers_or(1),
        ..Default::default()
    };
    let now = SystemClock.now_ms();
    let mut svc = open_campaign(&a.data_dir, &cfg, now)?;
    let summary = svc.advance_round(now)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Campaign directory, from `import` or one cell of `simulate`.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Output directory; defaults to DATA_DIR/reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn report(a: ReportArgs, g: Globals) -> Result<(), CliError> {
    let files = CampaignFiles::load(&a.data_dir, g.workers_or(1))?;
    let states = replay(&files.log)?;
    let report = CampaignReport::from_states(&states, &files.ground_truth())?;
    let out = create_dir(&a.out.unwrap_or_else(|| a.data_dir.join("reports")))?;
    write_json(&out.join("campaign.json"), &report)?;
    report.write_rounds_csv(std::fs::File::create(out.join("rounds.csv"))?)?;
    report.write_quality_csv(std::fs::File::create(out.join("quality.csv"))?)?;
    report.write_time_csv(std::fs::File::create(out.join("time.csv"))?)?;
    eprintln!("wrote reports for {} instances to {}", report.instances, out.display());
    Ok(())
}
