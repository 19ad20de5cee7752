//! The campaign service without the HTTP layer.
//!
//! Everything that changes state goes through [`Campaign::commit`], so the
//! event log is the only source of truth: task ids, answer hashes and leases
//! are all rebuilt from it on restart.

use std::collections::BTreeMap;
use std::sync::Arc;

use clickseg::analytics::CampaignReport;
use clickseg::annsim::{Click, Polarity, RoundAnswer};
use clickseg::campaign::{
    refine_state, status_name, AdvanceSummary, AnswerInfo, Campaign, CampaignError, EventPayload, EventRecord,
    EventSink, InstanceState, PreparedInstance,
};
use clickseg::maskcore::{rle_decode, BBox, Mask, RleMask};
use clickseg::ranker::{extract_features, Forest};
use clickseg::refine::{RefineError, Refiner, RefinerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::remote::RemoteRefiner;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    /// Well-formed but unacceptable input.
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl From<CampaignError> for ServiceError {
    fn from(e: CampaignError) -> Self {
        let msg = e.to_string();
        match e {
            CampaignError::UnknownInstance(_) => ServiceError::NotFound(msg),
            CampaignError::Terminal(_)
            | CampaignError::AwaitingMask(_)
            | CampaignError::WrongRound { .. }
            | CampaignError::UnexpectedMask { .. }
            | CampaignError::Duplicate(_) => ServiceError::Conflict(msg),
            CampaignError::TooManyClicks { .. } | CampaignError::Invalid(_) => ServiceError::Invalid(msg),
            _ => ServiceError::Internal(msg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceSettings {
    pub lease_ms: u64,
    /// Refine each click answer as it arrives instead of between rounds.
    pub immediate_refine: bool,
    /// Annotation policy text per class.
    pub policies: BTreeMap<String, String>,
    pub default_policy: String,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            lease_ms: 120_000,
            immediate_refine: false,
            policies: BTreeMap::new(),
            default_policy: String::new(),
        }
    }
}

/// One leased (instance, round) task as handed to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLease {
    pub task_id: String,
    pub instance_id: String,
    pub round: u32,
    pub annotator: String,
    pub expires_ms: u64,
    pub class: String,
    pub policy: String,
    pub max_clicks: usize,
    /// Side of the square canvas the crop, box and mask live on.
    pub canvas_size: usize,
    /// Input box on the canvas.
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub mask: RleMask,
    pub crop_url: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClickInput {
    pub x: f64,
    pub y: f64,
    pub polarity: Polarity,
    #[serde(default)]
    pub t_ms: u64,
}

/// Answer body: a click list, or the strings `"zero_clicks"` / `"skip"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerBody {
    Clicks {
        clicks: Vec<ClickInput>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration_ms: Option<u64>,
    },
    Plain(PlainAnswer),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlainAnswer {
    ZeroClicks,
    Skip,
}

impl AnswerBody {
    pub fn parse(bytes: &[u8]) -> Result<Self, ServiceError> {
        serde_json::from_slice(bytes).map_err(|e| ServiceError::BadRequest(format!("malformed answer: {e}")))
    }

    /// Hash of the canonical form, so formatting differences do not matter.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("answer serialises");
        hex::encode(Sha256::digest(&canonical))
    }

    fn into_answer(self, round: u32) -> (RoundAnswer, Option<u64>) {
        match self {
            AnswerBody::Clicks { clicks, duration_ms } => (
                RoundAnswer::Clicks {
                    clicks: clicks
                        .into_iter()
                        .map(|c| Click {
                            t_ms: c.t_ms,
                            ..Click::new(c.x, c.y, c.polarity, round)
                        })
                        .collect(),
                },
                duration_ms,
            ),
            AnswerBody::Plain(PlainAnswer::ZeroClicks) => (RoundAnswer::ZeroClicks, None),
            AnswerBody::Plain(PlainAnswer::Skip) => (RoundAnswer::Skip, None),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub task_id: String,
    pub instance_id: String,
    pub round: u32,
    pub answer: String,
    /// `active`, `awaiting_mask`, `accepted`, `skipped` or `exhausted`.
    pub status: String,
    /// Refined mask, in immediate-refine mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub campaign: String,
    pub next_seq: u64,
    pub instances: BTreeMap<String, InstanceState>,
}

#[derive(Debug, Clone)]
struct TaskRecord {
    instance_id: String,
    round: u32,
    annotator: String,
}

#[derive(Debug, Clone)]
struct AnsweredTask {
    hash: String,
    response: AnswerResponse,
}

/// Work for one instance waiting for its mask, detached from the service so
/// refinement can run without holding the lock.
#[derive(Clone)]
pub struct RefineJob {
    state: InstanceState,
    prepared: Arc<PreparedInstance>,
    refiner: Result<Arc<dyn Refiner>, RefineError>,
}

impl RefineJob {
    pub fn instance_id(&self) -> &str {
        &self.state.meta.id
    }

    pub fn run(&self) -> RefineOutcome {
        let result = match &self.refiner {
            Ok(r) => refine_state(r.as_ref(), &self.prepared, &self.state).map_err(|e| e.to_string()),
            Err(e) => Err(e.to_string()),
        };
        RefineOutcome {
            id: self.state.meta.id.clone(),
            round: self.state.current_round(),
            result,
        }
    }
}

pub struct RefineOutcome {
    pub id: String,
    pub round: u32,
    pub result: Result<Mask, String>,
}

/// Refiner for a whole campaign. Shared instances for everything except the
/// healing oracle, which is per-instance because it holds ground truth.
#[derive(Clone)]
pub enum RefinerSetup {
    Shared(Arc<dyn Refiner>),
    Oracle,
}

impl RefinerSetup {
    pub fn from_kind(kind: &RefinerKind, encoding: Option<clickseg::cropgeom::ClickEncoding>) -> Self {
        match kind {
            RefinerKind::HealingOracle => RefinerSetup::Oracle,
            RefinerKind::Remote {
                endpoint,
                timeout_ms,
                retries,
                max_in_flight,
            } => RefinerSetup::Shared(Arc::new(RemoteRefiner::new(
                endpoint.clone(),
                *timeout_ms,
                *retries,
                *max_in_flight,
                encoding,
            ))),
            local => RefinerSetup::Shared(Arc::from(
                local.instantiate(None).expect("local refiners need no inputs"),
            )),
        }
    }

    fn for_instance(&self, p: &PreparedInstance) -> Result<Arc<dyn Refiner>, RefineError> {
        match self {
            RefinerSetup::Shared(r) => Ok(r.clone()),
            RefinerSetup::Oracle => RefinerKind::HealingOracle.instantiate(p.gt.as_ref()).map(Arc::from),
        }
    }
}

pub struct CampaignService {
    name: String,
    campaign: Campaign,
    inputs: BTreeMap<String, Arc<PreparedInstance>>,
    refiner: RefinerSetup,
    settings: ServiceSettings,
    tasks: BTreeMap<String, TaskRecord>,
    answered: BTreeMap<String, AnsweredTask>,
    forest: Option<Forest>,
    scores: BTreeMap<String, f64>,
}

impl std::fmt::Debug for CampaignService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CampaignService")
            .field("name", &self.name)
            .field("campaign", &self.campaign)
            .finish()
    }
}

impl CampaignService {
    /// Opens a campaign over prepared instances. An empty `log` starts a new
    /// campaign and imports every instance; otherwise the log is replayed and
    /// must cover exactly the prepared instances.
    pub fn open(
        name: impl Into<String>,
        prepared: Vec<PreparedInstance>,
        log: &[EventRecord],
        sink: Box<dyn EventSink>,
        refiner: RefinerSetup,
        settings: ServiceSettings,
        now_ms: u64,
    ) -> Result<Self, ServiceError> {
        let inputs: BTreeMap<String, Arc<PreparedInstance>> =
            prepared.into_iter().map(|p| (p.meta.id.clone(), Arc::new(p))).collect();
        let campaign = if log.is_empty() {
            let mut c = Campaign::new(sink);
            for p in inputs.values() {
                c.import(p.meta.clone(), &p.initial, now_ms)?;
            }
            c
        } else {
            Campaign::resume(log, sink).map_err(|e| ServiceError::Internal(e.to_string()))?
        };
        for (id, st) in campaign.states() {
            let p = inputs
                .get(id)
                .ok_or_else(|| ServiceError::Internal(format!("log instance {id} is not in the manifest")))?;
            if p.meta != st.meta {
                return Err(ServiceError::Internal(format!(
                    "instance {id} changed since it was imported"
                )));
            }
        }
        if let Some(missing) = inputs.keys().find(|id| campaign.get(id).is_none()) {
            return Err(ServiceError::Internal(format!(
                "instance {missing} missing from the log"
            )));
        }
        let (tasks, answered) = rebuild_tasks(log, settings.immediate_refine);
        let mut svc = Self {
            name: name.into(),
            campaign,
            inputs,
            refiner,
            settings,
            tasks,
            answered,
            forest: None,
            scores: BTreeMap::new(),
        };
        svc.rescore_all();
        Ok(svc)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn settings(&self) -> &ServiceSettings {
        &self.settings
    }

    pub fn states(&self) -> &BTreeMap<String, InstanceState> {
        self.campaign.states()
    }

    /// Installs a quality ranker; instances with lower predicted IoU are
    /// leased first.
    pub fn set_ranker(&mut self, forest: Option<Forest>) {
        self.forest = forest;
        self.rescore_all();
    }

    pub fn score(&self, id: &str) -> Option<f64> {
        self.scores.get(id).copied()
    }

    fn rescore_all(&mut self) {
        self.scores.clear();
        let ids: Vec<String> = self.campaign.states().keys().cloned().collect();
        for id in ids {
            self.rescore(&id);
        }
    }

    fn rescore(&mut self, id: &str) {
        let (Some(forest), Some(st)) = (&self.forest, self.campaign.get(id)) else {
            return;
        };
        let last = st.rounds.iter().rev().find(|r| r.mask.is_some()).map(|r| r.round);
        match last.and_then(|r| extract_features(st, r).ok()) {
            Some(f) => {
                self.scores.insert(id.to_string(), forest.predict(&f));
            }
            None => {
                self.scores.remove(id);
            }
        }
    }

    /// Leases the next task for `annotator`. An annotator holding an
    /// unexpired lease gets the same lease back. Unscored instances come
    /// first, then the lowest predicted quality, then id order.
    pub fn next_task(&mut self, annotator: &str, now_ms: u64) -> Result<Option<TaskLease>, ServiceError> {
        let annotator = annotator.trim();
        if annotator.is_empty() || annotator.len() > 128 {
            return Err(ServiceError::BadRequest("annotator id must be 1-128 characters".into()));
        }
        let held = self.campaign.states().values().find(|st| {
            st.awaiting_answer()
                && st
                    .lease
                    .as_ref()
                    .is_some_and(|l| l.annotator == annotator && l.expires_ms > now_ms)
        });
        if let Some(st) = held {
            return Ok(Some(self.lease_view(st)));
        }
        let mut eligible: Vec<&InstanceState> = self
            .campaign
            .states()
            .values()
            .filter(|st| st.awaiting_answer() && st.lease.as_ref().is_none_or(|l| l.expires_ms <= now_ms))
            .collect();
        eligible.sort_by(|a, b| {
            let (sa, sb) = (self.scores.get(&a.meta.id), self.scores.get(&b.meta.id));
            sa.is_some()
                .cmp(&sb.is_some())
                .then(sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.meta.id.cmp(&b.meta.id))
        });
        let Some(id) = eligible.first().map(|st| st.meta.id.clone()) else {
            return Ok(None);
        };
        let task_id = format!("t{}", self.campaign.next_seq());
        let expires_ms = now_ms.saturating_add(self.settings.lease_ms);
        self.campaign.lease(&id, &task_id, annotator, expires_ms, now_ms)?;
        let st = self.campaign.get(&id).expect("just leased");
        self.tasks.insert(
            task_id,
            TaskRecord {
                instance_id: id.clone(),
                round: st.current_round(),
                annotator: annotator.to_string(),
            },
        );
        Ok(Some(self.lease_view(st)))
    }

    fn lease_view(&self, st: &InstanceState) -> TaskLease {
        let lease = st.lease.as_ref().expect("leased instance");
        let t = &st.meta.transform;
        TaskLease {
            task_id: lease.task_id.clone(),
            instance_id: st.meta.id.clone(),
            round: st.current_round(),
            annotator: lease.annotator.clone(),
            expires_ms: lease.expires_ms,
            class: st.meta.class.clone(),
            policy: self
                .settings
                .policies
                .get(&st.meta.class)
                .unwrap_or(&self.settings.default_policy)
                .clone(),
            max_clicks: st.meta.max_clicks,
            canvas_size: t.outer,
            bbox: t.box_to_canvas(&st.meta.bbox),
            mask: st.current_mask().expect("active instances have a mask").clone(),
            crop_url: format!("/api/v1/instances/{}/crop.png", st.meta.id),
        }
    }

    /// Records an answer for a leased task. Re-sending the same body returns
    /// the first response; nothing rejected is ever logged.
    pub fn submit_answer(&mut self, task_id: &str, body: &[u8], now_ms: u64) -> Result<AnswerResponse, ServiceError> {
        let parsed = AnswerBody::parse(body)?;
        let hash = parsed.hash();
        let task = self
            .tasks
            .get(task_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown task {task_id}")))?
            .clone();
        if let Some(done) = self.answered.get(task_id) {
            return if done.hash == hash {
                Ok(done.response.clone())
            } else {
                Err(ServiceError::Conflict(format!(
                    "task {task_id} was already answered differently"
                )))
            };
        }
        let st = self
            .campaign
            .get(&task.instance_id)
            .ok_or_else(|| ServiceError::Internal(format!("task {task_id} points at a missing instance")))?;
        if st.status.is_terminal() {
            return Err(ServiceError::Conflict(format!(
                "instance {} is terminal",
                task.instance_id
            )));
        }
        match &st.lease {
            Some(l) if l.task_id == task_id && l.expires_ms > now_ms => {}
            Some(l) if l.task_id == task_id => {
                return Err(ServiceError::Conflict(format!("lease {task_id} expired")));
            }
            _ => return Err(ServiceError::Conflict(format!("lease {task_id} was superseded"))),
        }
        if let AnswerBody::Clicks { clicks, .. } = &parsed {
            if clicks.len() > st.meta.max_clicks {
                return Err(ServiceError::Invalid(format!(
                    "{} clicks exceed the limit of {}",
                    clicks.len(),
                    st.meta.max_clicks
                )));
            }
        }
        let (answer, duration_ms) = parsed.into_answer(task.round);
        let kind = answer.kind_name().to_string();
        let info = AnswerInfo {
            annotator: Some(task.annotator.clone()),
            task_id: Some(task_id.to_string()),
            answer_hash: Some(hash.clone()),
            duration_ms,
        };
        self.campaign
            .answer_with(&task.instance_id, task.round, answer, info, now_ms)?;

        let mut mask = None;
        if self.settings.immediate_refine {
            let st = self.campaign.get(&task.instance_id).expect("answered instance");
            if st.awaiting_mask() {
                let job = self.job(st);
                let summary = self.commit_outcomes(vec![job.run()], now_ms)?;
                if !summary.refined.is_empty() {
                    mask = self
                        .campaign
                        .get(&task.instance_id)
                        .and_then(|s| s.current_mask().cloned());
                }
            }
        }
        let st = self.campaign.get(&task.instance_id).expect("answered instance");
        let response = AnswerResponse {
            task_id: task_id.to_string(),
            instance_id: task.instance_id.clone(),
            round: task.round,
            answer: kind,
            status: state_label(st).to_string(),
            mask,
        };
        self.answered.insert(
            task_id.to_string(),
            AnsweredTask {
                hash,
                response: response.clone(),
            },
        );
        Ok(response)
    }

    /// Refinement jobs for every instance waiting for a mask.
    pub fn jobs(&self) -> Vec<RefineJob> {
        self.campaign
            .states()
            .values()
            .filter(|st| st.awaiting_mask())
            .map(|st| self.job(st))
            .collect()
    }

    fn job(&self, st: &InstanceState) -> RefineJob {
        let p = self.inputs[&st.meta.id].clone();
        RefineJob {
            refiner: self.refiner.for_instance(&p),
            state: st.clone(),
            prepared: p,
        }
    }

    /// Commits finished refinements. Failures and jobs that went stale while
    /// running are parked; the instance keeps waiting for its mask.
    pub fn commit_outcomes(
        &mut self,
        outcomes: Vec<RefineOutcome>,
        now_ms: u64,
    ) -> Result<AdvanceSummary, ServiceError> {
        let mut summary = AdvanceSummary::default();
        for o in outcomes {
            let still_waiting = self
                .campaign
                .get(&o.id)
                .is_some_and(|st| st.awaiting_mask() && st.current_round() == o.round);
            match o.result {
                Ok(mask) if still_waiting => {
                    self.campaign.set_mask(&o.id, o.round, &mask, now_ms)?;
                    self.rescore(&o.id);
                    summary.refined.push(o.id);
                }
                Ok(_) => summary.parked.push((o.id, "instance changed while refining".into())),
                Err(e) => summary.parked.push((o.id, e)),
            }
        }
        Ok(summary)
    }

    /// Runs every pending refinement in place. The HTTP layer uses
    /// [`CampaignService::jobs`] and [`CampaignService::commit_outcomes`]
    /// instead, so the lock is not held while refining.
    pub fn advance_round(&mut self, now_ms: u64) -> Result<AdvanceSummary, ServiceError> {
        let outcomes = self.jobs().iter().map(RefineJob::run).collect();
        self.commit_outcomes(outcomes, now_ms)
    }

    /// Mask after `round`, or the current (final) mask without one.
    pub fn mask(&self, id: &str, round: Option<u32>) -> Result<RleMask, ServiceError> {
        let st = self
            .campaign
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown instance {id}")))?;
        if st.status == clickseg::campaign::Status::Skipped {
            return Err(ServiceError::NotFound(format!(
                "instance {id} was skipped and has no mask"
            )));
        }
        let m = match round {
            None => st.current_mask(),
            Some(r) => st.mask_after(r),
        };
        m.cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("instance {id} has no mask for that round")))
    }

    pub fn crop_png(&self, id: &str) -> Result<Vec<u8>, ServiceError> {
        let p = self
            .inputs
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown instance {id}")))?;
        p.crop.encode_png().map_err(|e| ServiceError::Internal(e.to_string()))
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            campaign: self.name.clone(),
            next_seq: self.campaign.next_seq(),
            instances: self.campaign.states().clone(),
        }
    }

    /// Analytics over the live state, with quality curves when ground truth
    /// is available.
    pub fn report(&self) -> Result<CampaignReport, ServiceError> {
        let gt: BTreeMap<String, Mask> = self
            .inputs
            .iter()
            .filter_map(|(id, p)| p.gt.clone().map(|g| (id.clone(), g)))
            .collect();
        CampaignReport::from_states(self.campaign.states(), &gt).map_err(|e| ServiceError::Internal(e.to_string()))
    }

    /// Decodes a mask the service handed out, for tests and tools.
    pub fn decode(m: &RleMask) -> Result<Mask, ServiceError> {
        rle_decode(m).map_err(|e| ServiceError::Internal(e.to_string()))
    }
}

fn state_label(st: &InstanceState) -> &'static str {
    if st.awaiting_mask() {
        "awaiting_mask"
    } else {
        status_name(st.status)
    }
}

/// Task ids and answer responses recorded in a log. In immediate mode a
/// mask committed right after an answer was part of that answer's response.
fn rebuild_tasks(
    log: &[EventRecord],
    immediate: bool,
) -> (BTreeMap<String, TaskRecord>, BTreeMap<String, AnsweredTask>) {
    let mut tasks = BTreeMap::new();
    let mut answered: BTreeMap<String, AnsweredTask> = BTreeMap::new();
    let mut states = BTreeMap::new();
    let mut last_answer: Option<(u64, String)> = None;
    for ev in log {
        // the log was already replayed successfully
        let _ = clickseg::campaign::apply_event(&mut states, ev);
        let st: Option<&InstanceState> = states.get(&ev.instance_id);
        match &ev.payload {
            EventPayload::Lease { task_id, annotator, .. } => {
                tasks.insert(
                    task_id.clone(),
                    TaskRecord {
                        instance_id: ev.instance_id.clone(),
                        round: ev.round,
                        annotator: annotator.clone(),
                    },
                );
            }
            EventPayload::Answer {
                answer,
                task_id: Some(task_id),
                answer_hash: Some(hash),
                ..
            } => {
                answered.insert(
                    task_id.clone(),
                    AnsweredTask {
                        hash: hash.clone(),
                        response: AnswerResponse {
                            task_id: task_id.clone(),
                            instance_id: ev.instance_id.clone(),
                            round: ev.round,
                            answer: answer.kind_name().to_string(),
                            status: st.map_or("active", state_label).to_string(),
                            mask: None,
                        },
                    },
                );
                last_answer = Some((ev.seq, task_id.clone()));
                continue;
            }
            EventPayload::MaskComputed { mask } if immediate => {
                if let Some((seq, task_id)) = &last_answer {
                    let a = answered.get_mut(task_id).expect("recorded above");
                    if seq + 1 == ev.seq && a.response.instance_id == ev.instance_id {
                        a.response.status = st.map_or("active", state_label).to_string();
                        a.response.mask = Some(mask.clone());
                    }
                }
            }
            _ => {}
        }
        last_answer = None;
    }
    (tasks, answered)
}
