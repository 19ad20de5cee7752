//! Server settings and the campaign data directory.
//!
//! A data directory holds `campaign.json` (written once by import),
//! `manifest.json` (the imported instances), `events.jsonl` (the event log)
//! and optionally `ranker.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clickseg::campaign::{
    import_manifest, load_manifest, prepare_manifest, read_jsonl, Campaign, CampaignError, DirImageStore, EventRecord,
    ExperimentSpec, ImportReport, JsonlLog, Manifest, PreparedInstance,
};
use clickseg::cropgeom::{ClickEncoding, GeometryProfile};
use clickseg::maskcore::Mask;
use clickseg::ranker::Forest;
use clickseg::refine::RefinerKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::service::{CampaignService, RefinerSetup, ServiceError, ServiceSettings};

pub const CAMPAIGN_FILE: &str = "campaign.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const RANKER_FILE: &str = "ranker.json";

#[derive(Debug, Error)]
pub enum SetupError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Process-level settings, from a TOML or JSON file plus `CLICKSEG_PORT`
/// and `CLICKSEG_DATA_DIR`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub lease_secs: u64,
    pub immediate_refine: bool,
    pub workers: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("campaign"),
            lease_secs: 120,
            immediate_refine: false,
            workers: 1,
        }
    }
}

impl ServerConfig {
    /// `.json` files are parsed as JSON, anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SetupError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let bad = |e: String| SetupError::Invalid(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| bad(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| bad(e.to_string()))
        }
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), SetupError> {
        if let Some(p) = var("CLICKSEG_PORT") {
            self.port = p
                .trim()
                .parse()
                .map_err(|_| SetupError::Invalid(format!("CLICKSEG_PORT={p} is not a port")))?;
        }
        if let Some(d) = var("CLICKSEG_DATA_DIR") {
            self.data_dir = PathBuf::from(d);
        }
        Ok(())
    }

    pub fn settings(&self, campaign: &CampaignConfig) -> ServiceSettings {
        ServiceSettings {
            lease_ms: self.lease_secs.saturating_mul(1000),
            immediate_refine: self.immediate_refine,
            policies: campaign.policies.clone(),
            default_policy: campaign.default_policy.clone(),
        }
    }
}

/// What a campaign was imported with; fixed for its lifetime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub name: String,
    /// Directory the manifest's image paths are relative to.
    pub image_root: PathBuf,
    pub profile: GeometryProfile,
    pub clicks_per_round: usize,
    pub rounds: u32,
    pub refiner: RefinerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<ClickEncoding>,
    #[serde(default)]
    pub seed: u64,
    /// Corner noise applied to input boxes; 0 for live campaigns, where
    /// annotators see the box as given.
    #[serde(default)]
    pub box_sigma: f64,
    #[serde(default)]
    pub policies: BTreeMap<String, String>,
    #[serde(default)]
    pub default_policy: String,
}

impl CampaignConfig {
    pub fn new(name: impl Into<String>, image_root: impl Into<PathBuf>) -> Self {
        Self {
            name: name.into(),
            image_root: image_root.into(),
            profile: GeometryProfile::Campaign,
            clicks_per_round: 4,
            rounds: 3,
            refiner: RefinerKind::geodesic(),
            encoding: None,
            seed: 0,
            box_sigma: 0.0,
            policies: BTreeMap::new(),
            default_policy: "Click inside regions the mask misses and outside regions it wrongly covers. \
                             Accept with no clicks when the mask is good; skip when no mask should exist."
                .into(),
        }
    }

    pub fn spec(&self) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(self.clicks_per_round, self.rounds);
        spec.profile = self.profile;
        spec.refiner = self.refiner.clone();
        spec.encoding = self.encoding;
        spec.seed = self.seed;
        spec.box_sigma = self.box_sigma;
        spec
    }
}

/// Creates a campaign directory: filters the manifest, writes the config and
/// logs one import event per accepted instance.
pub fn create_campaign(
    dir: impl AsRef<Path>,
    config: &CampaignConfig,
    manifest: &Manifest,
    workers: usize,
    now_ms: u64,
) -> Result<ImportReport, SetupError> {
    let dir = dir.as_ref();
    config.spec().validate()?;
    if dir.join(EVENTS_FILE).exists() {
        return Err(SetupError::Invalid(format!(
            "{} already holds a campaign",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let store = DirImageStore::new(&config.image_root);
    let (kept, report) = import_manifest(manifest, &store, config.profile);
    let prepared = prepare_manifest(&kept, &store, &config.spec(), workers)?;
    std::fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&kept).map_err(CampaignError::from)?,
    )?;
    std::fs::write(
        dir.join(CAMPAIGN_FILE),
        serde_json::to_vec_pretty(config).map_err(CampaignError::from)?,
    )?;
    let mut campaign = Campaign::new(Box::new(JsonlLog::open(dir.join(EVENTS_FILE))?));
    for p in &prepared {
        campaign.import(p.meta.clone(), &p.initial, now_ms)?;
    }
    Ok(report)
}

pub fn load_campaign_config(dir: impl AsRef<Path>) -> Result<CampaignConfig, SetupError> {
    let path = dir.as_ref().join(CAMPAIGN_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| SetupError::Invalid(format!("{}: {e} (run import first)", path.display())))?;
    serde_json::from_str(&text).map_err(|e| SetupError::Invalid(format!("{}: {e}", path.display())))
}

/// Everything stored in a campaign directory, with instances prepared again
/// from the stored manifest.
pub struct CampaignFiles {
    pub config: CampaignConfig,
    pub prepared: Vec<PreparedInstance>,
    pub log: Vec<EventRecord>,
}

impl CampaignFiles {
    pub fn load(dir: impl AsRef<Path>, workers: usize) -> Result<Self, SetupError> {
        let dir = dir.as_ref();
        let config = load_campaign_config(dir)?;
        let manifest = load_manifest(dir.join(MANIFEST_FILE))?;
        let store = DirImageStore::new(&config.image_root);
        let prepared = prepare_manifest(&manifest, &store, &config.spec(), workers)?;
        let events = dir.join(EVENTS_FILE);
        let log = if events.exists() {
            read_jsonl(&events)?
        } else {
            Vec::new()
        };
        Ok(Self { config, prepared, log })
    }

    /// Canvas ground truth of the instances that have it.
    pub fn ground_truth(&self) -> BTreeMap<String, Mask> {
        self.prepared
            .iter()
            .filter_map(|p| p.gt.clone().map(|g| (p.meta.id.clone(), g)))
            .collect()
    }
}

/// Opens a campaign directory for serving. Instances must match their
/// import events.
pub fn open_campaign(dir: impl AsRef<Path>, server: &ServerConfig, now_ms: u64) -> Result<CampaignService, SetupError> {
    let dir = dir.as_ref();
    let CampaignFiles { config, prepared, log } = CampaignFiles::load(dir, server.workers)?;
    let events = dir.join(EVENTS_FILE);
    let sink = Box::new(JsonlLog::open(&events)?);
    let mut svc = CampaignService::open(
        config.name.clone(),
        prepared,
        &log,
        sink,
        RefinerSetup::from_kind(&config.refiner, config.encoding),
        server.settings(&config),
        now_ms,
    )?;
    let ranker = dir.join(RANKER_FILE);
    if ranker.exists() {
        let forest = Forest::load(&ranker).map_err(|e| SetupError::Invalid(format!("{}: {e}", ranker.display())))?;
        svc.set_ranker(Some(forest));
    }
    Ok(svc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_file_and_env_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("server.toml");
        std::fs::write(&path, "port = 9000\nlease_secs = 30\n").unwrap();
        let mut c = ServerConfig::load(&path).unwrap();
        assert_eq!((c.port, c.lease_secs, c.host.as_str()), (9000, 30, "127.0.0.1"));
        let env: BTreeMap<&str, &str> = [("CLICKSEG_PORT", "9100"), ("CLICKSEG_DATA_DIR", "/srv/c")].into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!((c.port, c.data_dir.as_path()), (9100, Path::new("/srv/c")));
        assert!(c.apply_env(|_| Some("nope".into())).is_err());

        std::fs::write(&path, "prot = 1\n").unwrap();
        assert!(ServerConfig::load(&path).is_err());
        let json = dir.path().join("server.json");
        std::fs::write(&json, r#"{"immediate_refine": true}"#).unwrap();
        assert!(ServerConfig::load(&json).unwrap().immediate_refine);
    }
}
