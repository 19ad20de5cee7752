//! Simulated k×r experiments over a manifest with ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::log::MemoryLog;
use super::manifest::{ImageEntry, ImageStore, InstanceEntry, Manifest};
use super::state::{InstanceMeta, InstanceState, Status};
use super::{accumulated_clicks, Campaign, CampaignError, EventRecord};
use crate::annsim::{perturb_box, simulate_round, substream, AnnotatorModel};
use crate::cropgeom::{make_transform, warp_image, warp_mask, ClickEncoding, GeometryProfile};
use crate::maskcore::{boundary_f, iou, rle_decode, BBox, Mask, RleMask};
use crate::par::for_each_ordered;
use crate::refine::{box_prior_refine, BoxPriorParams, RefineRequest, RefinerKind};
use crate::rgb::RgbImage;

/// Boundary tolerance used in reports, in canvas pixels.
pub const BOUNDARY_TOL: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub clicks_per_round: usize,
    pub rounds: u32,
    #[serde(default)]
    pub annotator: AnnotatorModel,
    #[serde(default = "RefinerKind::geodesic")]
    pub refiner: RefinerKind,
    /// Click encoding sent to remote refiners.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoding: Option<ClickEncoding>,
    #[serde(default = "default_profile")]
    pub profile: GeometryProfile,
    #[serde(default)]
    pub seed: u64,
    /// Corner noise for the simulated input box, image pixels.
    #[serde(default = "default_box_sigma")]
    pub box_sigma: f64,
    #[serde(default = "default_box_min_iou")]
    pub box_min_iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
}

fn default_profile() -> GeometryProfile {
    GeometryProfile::Blueprint
}

fn default_box_sigma() -> f64 {
    10.0
}

fn default_box_min_iou() -> f64 {
    0.7
}

impl ExperimentSpec {
    pub fn new(clicks_per_round: usize, rounds: u32) -> Self {
        Self {
            clicks_per_round,
            rounds,
            annotator: AnnotatorModel::blueprint(),
            refiner: RefinerKind::geodesic(),
            encoding: None,
            profile: default_profile(),
            seed: 0,
            box_sigma: default_box_sigma(),
            box_min_iou: default_box_min_iou(),
            manifest: None,
        }
    }

    /// Every problem with the spec, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.clicks_per_round < 1 {
            p.push("clicks_per_round must be >= 1".to_string());
        }
        if self.rounds < 1 {
            p.push("rounds must be >= 1".to_string());
        }
        if !(self.box_sigma >= 0.0) {
            p.push("box_sigma must be >= 0".to_string());
        }
        if !(self.box_min_iou > 0.0 && self.box_min_iou <= 1.0) {
            p.push("box_min_iou must be in (0, 1]".to_string());
        }
        if let Err(e) = self.annotator.validate() {
            p.push(e.to_string());
        }
        if let Some(enc) = &self.encoding {
            if let Err(e) = enc.validate() {
                p.push(e.to_string());
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(CampaignError::Invalid(p.join("; ")))
        }
    }

    /// The annotator with the per-round click budget of this spec.
    pub fn effective_annotator(&self) -> AnnotatorModel {
        AnnotatorModel {
            max_clicks_per_round: self.clicks_per_round,
            ..self.annotator.clone()
        }
    }
}

/// An instance mapped onto its canvas, ready for any number of runs. Only
/// depends on the seed, box noise and geometry profile; `meta` carries the
/// click and round limits of the spec it was prepared with.
#[derive(Debug, Clone)]
pub struct PreparedInstance {
    pub entry: InstanceEntry,
    pub image_box: BBox,
    pub crop: RgbImage,
    pub box_mask: Mask,
    /// Ground truth on the canvas.
    pub gt: Option<Mask>,
    /// Box-only mask shown in round 1.
    pub initial: Mask,
    pub meta: InstanceMeta,
}

pub fn prepare_instance(
    entry: &InstanceEntry,
    image_entry: &ImageEntry,
    image: &RgbImage,
    spec: &ExperimentSpec,
) -> Result<PreparedInstance, CampaignError> {
    let dims = (image.width(), image.height());
    let gt_img = entry.gt_mask(dims.0, dims.1)?;
    let mut rng = substream(spec.seed, &entry.id, 0);
    let image_box = perturb_box(&entry.bbox(), spec.box_sigma, spec.box_min_iou, &mut rng)?;
    let t = make_transform(&image_box, dims, spec.profile.inner(), spec.profile.outer())?;
    let crop = warp_image(image, &t);
    let box_mask = t.box_mask(&image_box);
    let initial = box_prior_refine(&crop, &box_mask, &BoxPriorParams::default())?;
    let gt = gt_img.as_ref().map(|g| warp_mask(g, &t));
    let meta = InstanceMeta {
        id: entry.id.clone(),
        class: entry.class.clone(),
        image_id: image_entry.id.clone(),
        image_ref: image_entry.path.clone(),
        gt_ref: entry.has_gt().then(|| format!("manifest:{}", entry.id)),
        bbox: image_box,
        transform: t,
        max_rounds: spec.rounds,
        max_clicks: spec.clicks_per_round,
    };
    Ok(PreparedInstance {
        entry: entry.clone(),
        image_box,
        crop,
        box_mask,
        gt,
        initial,
        meta,
    })
}

/// Prepares every instance of a manifest. Images are loaded once each.
pub fn prepare_manifest(
    manifest: &Manifest,
    store: &dyn ImageStore,
    spec: &ExperimentSpec,
    workers: usize,
) -> Result<Vec<PreparedInstance>, CampaignError> {
    let images = manifest.image_index();
    let mut by_image: BTreeMap<&str, Vec<&InstanceEntry>> = BTreeMap::new();
    for inst in &manifest.instances {
        by_image.entry(inst.image_id.as_str()).or_default().push(inst);
    }
    let groups: Vec<(&str, Vec<&InstanceEntry>)> = by_image.into_iter().collect();
    let prepared = for_each_ordered(&groups, workers, |(image_id, insts)| {
        let entry = images
            .get(image_id)
            .ok_or_else(|| CampaignError::Manifest(format!("unknown image {image_id}")))?;
        let image = store.load(entry)?;
        insts
            .iter()
            .map(|i| prepare_instance(i, entry, &image, spec))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut by_id: BTreeMap<String, PreparedInstance> = BTreeMap::new();
    for group in prepared {
        for p in group? {
            by_id.insert(p.entry.id.clone(), p);
        }
    }
    // manifest order
    Ok(manifest.instances.iter().filter_map(|i| by_id.remove(&i.id)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub id: String,
    pub class: String,
    pub status: Status,
    /// IoU after each round; index 0 is the box-only mask. Rounds after a
    /// terminal answer repeat the frozen mask's score.
    pub iou: Vec<f64>,
    pub boundary_f: Vec<f64>,
    /// Cumulative clicks after each round, index 0 is 0.
    pub clicks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAggregate {
    pub round: u32,
    /// `round × clicks_per_round`.
    pub nominal_clicks: usize,
    pub mean_clicks: f64,
    /// Skipped instances count as 0.
    pub mean_iou: f64,
    /// Skipped instances excluded.
    pub mean_iou_answered: f64,
    pub mean_boundary_f: f64,
    pub instances: usize,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub clicks_per_round: usize,
    pub rounds: u32,
    pub seed: u64,
    pub refiner: String,
    pub aggregates: Vec<RoundAggregate>,
    pub instances: Vec<InstanceResult>,
    pub failures: Vec<(String, String)>,
}

impl ExperimentReport {
    pub fn final_miou(&self) -> f64 {
        self.aggregates.last().map_or(0.0, |a| a.mean_iou)
    }

    /// One row per round `1..=rounds`, prefixed with `cell`.
    pub fn write_aggregate_csv<W: std::io::Write>(&self, cell: &str, w: &mut csv::Writer<W>) -> csv::Result<()> {
        for a in self.aggregates.iter().filter(|a| a.round >= 1) {
            w.write_record([
                cell.to_string(),
                self.clicks_per_round.to_string(),
                self.rounds.to_string(),
                a.round.to_string(),
                a.nominal_clicks.to_string(),
                format!("{:.4}", a.mean_clicks),
                format!("{:.6}", a.mean_iou),
                format!("{:.6}", a.mean_iou_answered),
                format!("{:.6}", a.mean_boundary_f),
                a.instances.to_string(),
            ])?;
        }
        Ok(())
    }

    pub const AGGREGATE_HEADER: [&'static str; 10] = [
        "cell",
        "clicks_per_round",
        "rounds",
        "round",
        "nominal_clicks",
        "mean_clicks",
        "miou",
        "miou_answered",
        "boundary_f",
        "instances",
    ];

    pub fn write_instance_csv<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> csv::Result<()> {
        w.write_record(["id", "class", "status", "round", "clicks", "iou", "boundary_f"])?;
        for r in &self.instances {
            for (k, (&i, &b)) in r.iou.iter().zip(&r.boundary_f).enumerate() {
                w.write_record([
                    r.id.clone(),
                    r.class.clone(),
                    status_name(r.status).to_string(),
                    k.to_string(),
                    r.clicks[k].to_string(),
                    format!("{i:.6}"),
                    format!("{b:.6}"),
                ])?;
            }
        }
        Ok(())
    }
}

pub fn status_name(s: Status) -> &'static str {
    match s {
        Status::Active => "active",
        Status::Accepted => "accepted",
        Status::Skipped => "skipped",
        Status::Exhausted => "exhausted",
    }
}

/// Loads, prepares and runs. See [`run_prepared`].
pub fn run_experiment(
    spec: &ExperimentSpec,
    manifest: &Manifest,
    store: &dyn ImageStore,
    workers: usize,
) -> Result<(ExperimentReport, Vec<EventRecord>), CampaignError> {
    spec.validate()?;
    if let Some(i) = manifest.instances.iter().find(|i| !i.has_gt()) {
        return Err(CampaignError::MissingGroundTruth(i.id.clone()));
    }
    let prepared = prepare_manifest(manifest, store, spec, workers)?;
    run_prepared(spec, &prepared, workers)
}

/// Runs every prepared instance through the simulated rounds. Instances are
/// independent, each with its own random substreams, so the result does not
/// depend on `workers`. Events are merged in instance order.
pub fn run_prepared(
    spec: &ExperimentSpec,
    prepared: &[PreparedInstance],
    workers: usize,
) -> Result<(ExperimentReport, Vec<EventRecord>), CampaignError> {
    spec.validate()?;
    if let Some(p) = prepared.iter().find(|p| p.gt.is_none()) {
        return Err(CampaignError::MissingGroundTruth(p.entry.id.clone()));
    }
    let outcomes = for_each_ordered(prepared, workers, |p| run_instance(spec, p));
    let mut instances = Vec::new();
    let mut failures = Vec::new();
    let mut events = Vec::new();
    for (p, out) in prepared.iter().zip(outcomes) {
        match out {
            Ok((res, evs)) => {
                instances.push(res);
                events.extend(evs);
            }
            Err(e) => failures.push((p.entry.id.clone(), e.to_string())),
        }
    }
    for (seq, ev) in events.iter_mut().enumerate() {
        ev.seq = seq as u64;
    }
    let aggregates = (0..=spec.rounds)
        .map(|r| aggregate(&instances, r, spec.clicks_per_round))
        .collect();
    Ok((
        ExperimentReport {
            clicks_per_round: spec.clicks_per_round,
            rounds: spec.rounds,
            seed: spec.seed,
            refiner: refiner_name(&spec.refiner).to_string(),
            aggregates,
            instances,
            failures,
        },
        events,
    ))
}

pub fn refiner_name(k: &RefinerKind) -> &'static str {
    match k {
        RefinerKind::HealingOracle => "healing_oracle",
        RefinerKind::BoxPrior { .. } => "box_prior",
        RefinerKind::GeodesicClick { .. } => "geodesic_click",
        RefinerKind::Remote { .. } => "remote",
    }
}

fn aggregate(instances: &[InstanceResult], r: u32, k: usize) -> RoundAggregate {
    let n = instances.len();
    let r_ = r as usize;
    let mean = |f: &dyn Fn(&InstanceResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            instances.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let answered: Vec<&InstanceResult> = instances.iter().filter(|i| i.status != Status::Skipped).collect();
    RoundAggregate {
        round: r,
        nominal_clicks: r_ * k,
        mean_clicks: mean(&|i| i.clicks[r_] as f64),
        mean_iou: mean(&|i| if i.status == Status::Skipped { 0.0 } else { i.iou[r_] }),
        mean_iou_answered: if answered.is_empty() {
            0.0
        } else {
            answered.iter().map(|i| i.iou[r_]).sum::<f64>() / answered.len() as f64
        },
        mean_boundary_f: mean(&|i| i.boundary_f[r_]),
        instances: n,
        active: instances
            .iter()
            .filter(|i| i.clicks.get(r_ + 1).is_some_and(|&c| c > i.clicks[r_]))
            .count(),
    }
}

fn run_instance(
    spec: &ExperimentSpec,
    p: &PreparedInstance,
) -> Result<(InstanceResult, Vec<EventRecord>), CampaignError> {
    let gt =
        p.gt.as_ref()
            .ok_or_else(|| CampaignError::MissingGroundTruth(p.entry.id.clone()))?;
    let refiner = spec.refiner.instantiate(Some(gt))?;
    let model = spec.effective_annotator();
    let log = MemoryLog::new();
    let mut camp = Campaign::new(Box::new(log.clone()));
    let id = p.meta.id.as_str();
    // limits come from this run, not from the spec the instance was prepared with
    let meta = InstanceMeta {
        max_rounds: spec.rounds,
        max_clicks: spec.clicks_per_round,
        ..p.meta.clone()
    };
    camp.import(meta, &p.initial, 0)?;

    let score = |m: &Mask| -> Result<(f64, f64), CampaignError> { Ok((iou(m, gt)?, boundary_f(m, gt, BOUNDARY_TOL)?)) };
    let (i0, b0) = score(&p.initial)?;
    let mut ious = vec![i0];
    let mut bfs = vec![b0];
    let mut clicks = vec![0];
    let mut current = p.initial.clone();

    for r in 1..=spec.rounds {
        let st = camp.get(id).expect("imported");
        if st.awaiting_answer() {
            let mut rng = substream(spec.seed ^ model.rng_seed, id, r);
            let answer = simulate_round(&current, gt, &model, r, &mut rng)?;
            camp.advance_instance(id, answer, 0, |st| refine_state(&*refiner, p, st))?;
            let st = camp.get(id).expect("imported");
            if let Some(m) = st.current_mask() {
                current = rle_decode(m)?;
            }
        }
        let (i, b) = score(&current)?;
        ious.push(i);
        bfs.push(b);
        clicks.push(camp.get(id).expect("imported").total_clicks());
    }
    let st = camp.get(id).expect("imported");
    let res = InstanceResult {
        id: id.to_string(),
        class: p.entry.class.clone(),
        status: st.status,
        iou: ious,
        boundary_f: bfs,
        clicks,
        final_mask: st.current_mask().cloned(),
    };
    drop(camp);
    Ok((res, log.take()))
}

/// Refines the pending round of `st` with the prepared canvas inputs.
pub fn refine_state(
    refiner: &dyn crate::refine::Refiner,
    p: &PreparedInstance,
    st: &InstanceState,
) -> Result<Mask, CampaignError> {
    let prev = rle_decode(st.mask_before(st.current_round()).expect("previous mask exists"))?;
    let clicks = accumulated_clicks(st);
    let req = RefineRequest {
        instance_id: &st.meta.id,
        crop: &p.crop,
        transform: &st.meta.transform,
        image_box: &p.image_box,
        box_mask: &p.box_mask,
        clicks: &clicks,
        prev_mask: &prev,
        round: st.current_round(),
    };
    Ok(refiner.refine(&req)?)
}

/// Final masks as RLE, keyed by instance id.
pub fn final_mask_map(report: &ExperimentReport) -> BTreeMap<String, RleMask> {
    report
        .instances
        .iter()
        .filter_map(|i| i.final_mask.clone().map(|m| (i.id.clone(), m)))
        .collect()
}
