//! Round orchestration, the event log, manifests and experiment runs.
//!
//! Every state change is an [`EventRecord`]. [`Campaign`] validates an event
//! against a copy of the affected instance, appends it to its sink, and only
//! then commits it, so the in-memory state never runs ahead of the log.

mod experiment;
mod log;
mod manifest;
mod state;

pub use experiment::{
    final_mask_map, prepare_instance, prepare_manifest, refine_state, refiner_name, run_experiment, run_prepared,
    status_name, ExperimentReport, ExperimentSpec, InstanceResult, PreparedInstance, RoundAggregate, BOUNDARY_TOL,
};
pub use log::{
    apply_event, read_jsonl, replay, write_jsonl, EventPayload, EventRecord, EventSink, JsonlLog, MemoryLog, NullSink,
};
pub use manifest::{
    import_manifest, load_manifest, rasterize_polygon, DirImageStore, ImageEntry, ImageStore, ImportReport,
    InstanceEntry, Manifest, MemoryImageStore, RejectedInstance,
};
pub use state::{InstanceMeta, InstanceState, LeaseInfo, RoundRecord, Status};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::annsim::{Click, RoundAnswer};
use crate::maskcore::{rle_encode, Mask, RleMask};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("instance {0} is terminal")]
    Terminal(String),
    #[error("instance {0} is waiting for its refined mask")]
    AwaitingMask(String),
    #[error("instance {id}: answer for round {got}, current round is {expected}")]
    WrongRound { id: String, expected: u32, got: u32 },
    #[error("{got} clicks exceed the limit of {max}")]
    TooManyClicks { got: usize, max: usize },
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("instance {id} has no pending round {round}")]
    UnexpectedMask { id: String, round: u32 },
    #[error("instance {0} imported twice")]
    Duplicate(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("corrupt event log: {0}")]
    Corrupt(String),
    #[error("instance {0} has no ground truth")]
    MissingGroundTruth(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Mask(#[from] crate::maskcore::MaskError),
    #[error(transparent)]
    Sim(#[from] crate::annsim::SimError),
    #[error(transparent)]
    Geom(#[from] crate::cropgeom::GeomError),
    #[error(transparent)]
    Refine(#[from] crate::refine::RefineError),
}

impl CampaignError {
    /// Errors caused by the caller's input rather than by the system.
    pub fn is_rejection(&self) -> bool {
        matches!(
            self,
            CampaignError::Terminal(_)
                | CampaignError::AwaitingMask(_)
                | CampaignError::WrongRound { .. }
                | CampaignError::TooManyClicks { .. }
                | CampaignError::Invalid(_)
                | CampaignError::UnexpectedMask { .. }
                | CampaignError::Duplicate(_)
                | CampaignError::UnknownInstance(_)
        )
    }
}

/// Outcome of a batch refinement.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdvanceSummary {
    pub refined: Vec<String>,
    /// Instances left awaiting their mask, with the reason.
    pub parked: Vec<(String, String)>,
}

/// Live campaign: instance states plus the sink that records every change.
pub struct Campaign {
    states: BTreeMap<String, InstanceState>,
    next_seq: u64,
    sink: Box<dyn EventSink>,
}

impl std::fmt::Debug for Campaign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Campaign")
            .field("instances", &self.states.len())
            .field("next_seq", &self.next_seq)
            .finish()
    }
}

impl Campaign {
    pub fn new(sink: Box<dyn EventSink>) -> Self {
        Self {
            states: BTreeMap::new(),
            next_seq: 0,
            sink,
        }
    }

    /// Rebuilds a campaign from an existing log; new events continue its
    /// sequence.
    pub fn resume(log: &[EventRecord], sink: Box<dyn EventSink>) -> Result<Self, CampaignError> {
        let states = replay(log)?;
        Ok(Self {
            states,
            next_seq: log.last().map_or(0, |e| e.seq + 1),
            sink,
        })
    }

    pub fn states(&self) -> &BTreeMap<String, InstanceState> {
        &self.states
    }

    pub fn get(&self, id: &str) -> Option<&InstanceState> {
        self.states.get(id)
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Validates, logs and applies one event.
    pub fn commit(
        &mut self,
        instance_id: &str,
        round: u32,
        payload: EventPayload,
        ts_ms: u64,
    ) -> Result<EventRecord, CampaignError> {
        let ev = EventRecord {
            seq: self.next_seq,
            ts_ms,
            instance_id: instance_id.to_string(),
            round,
            payload,
        };
        let mut scratch = BTreeMap::new();
        if let Some(st) = self.states.get(instance_id) {
            scratch.insert(instance_id.to_string(), st.clone());
        }
        apply_event(&mut scratch, &ev)?;
        self.sink.append(&ev)?;
        let st = scratch.remove(instance_id).expect("event applied to this instance");
        self.states.insert(instance_id.to_string(), st);
        self.next_seq += 1;
        Ok(ev)
    }

    pub fn import(&mut self, meta: InstanceMeta, initial_mask: &Mask, ts_ms: u64) -> Result<(), CampaignError> {
        let id = meta.id.clone();
        self.commit(
            &id,
            0,
            EventPayload::Import {
                meta,
                initial_mask: rle_encode(initial_mask),
            },
            ts_ms,
        )?;
        Ok(())
    }

    pub fn lease(
        &mut self,
        id: &str,
        task_id: &str,
        annotator: &str,
        expires_ms: u64,
        ts_ms: u64,
    ) -> Result<(), CampaignError> {
        let round = self.state(id)?.current_round();
        self.commit(
            id,
            round,
            EventPayload::Lease {
                task_id: task_id.to_string(),
                annotator: annotator.to_string(),
                expires_ms,
            },
            ts_ms,
        )?;
        Ok(())
    }

    /// Records an answer for `round`. Click answers leave the instance
    /// waiting for [`Campaign::set_mask`].
    pub fn answer(&mut self, id: &str, round: u32, answer: RoundAnswer, ts_ms: u64) -> Result<(), CampaignError> {
        self.answer_with(id, round, answer, AnswerInfo::default(), ts_ms)
    }

    pub fn answer_with(
        &mut self,
        id: &str,
        round: u32,
        answer: RoundAnswer,
        info: AnswerInfo,
        ts_ms: u64,
    ) -> Result<(), CampaignError> {
        self.commit(
            id,
            round,
            EventPayload::Answer {
                answer,
                annotator: info.annotator,
                task_id: info.task_id,
                answer_hash: info.answer_hash,
                duration_ms: info.duration_ms,
            },
            ts_ms,
        )?;
        Ok(())
    }

    pub fn set_mask(&mut self, id: &str, round: u32, mask: &Mask, ts_ms: u64) -> Result<(), CampaignError> {
        self.commit(id, round, EventPayload::MaskComputed { mask: rle_encode(mask) }, ts_ms)?;
        Ok(())
    }

    /// Applies one answer and, for click answers, refines immediately.
    pub fn advance_instance(
        &mut self,
        id: &str,
        answer: RoundAnswer,
        ts_ms: u64,
        refine: impl FnOnce(&InstanceState) -> Result<Mask, CampaignError>,
    ) -> Result<(), CampaignError> {
        let round = self.state(id)?.current_round();
        self.answer(id, round, answer, ts_ms)?;
        let st = self.state(id)?;
        if st.awaiting_mask() {
            let mask = refine(st)?;
            self.set_mask(id, round, &mask, ts_ms)?;
        }
        Ok(())
    }

    /// Refines every instance waiting for a mask. Failures are parked (the
    /// instance keeps waiting) and do not stop the batch.
    pub fn advance_round(
        &mut self,
        ts_ms: u64,
        mut refine: impl FnMut(&InstanceState) -> Result<Mask, CampaignError>,
    ) -> Result<AdvanceSummary, CampaignError> {
        let pending: Vec<String> = self
            .states
            .values()
            .filter(|s| s.awaiting_mask())
            .map(|s| s.meta.id.clone())
            .collect();
        let mut summary = AdvanceSummary::default();
        for id in pending {
            let st = &self.states[&id];
            let round = st.current_round();
            match refine(st) {
                Ok(mask) => {
                    self.set_mask(&id, round, &mask, ts_ms)?;
                    summary.refined.push(id);
                }
                Err(e) => summary.parked.push((id, e.to_string())),
            }
        }
        Ok(summary)
    }

    fn state(&self, id: &str) -> Result<&InstanceState, CampaignError> {
        self.states
            .get(id)
            .ok_or_else(|| CampaignError::UnknownInstance(id.to_string()))
    }
}

/// Optional metadata attached to an answer event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnswerInfo {
    pub annotator: Option<String>,
    pub task_id: Option<String>,
    pub answer_hash: Option<String>,
    pub duration_ms: Option<u64>,
}

/// All clicks recorded so far, in round order.
pub fn accumulated_clicks(st: &InstanceState) -> Vec<Click> {
    st.rounds
        .iter()
        .flat_map(|r| r.answer.clicks().iter().copied())
        .collect()
}

/// Final mask per instance; skipped instances are absent.
pub fn final_masks(states: &BTreeMap<String, InstanceState>) -> BTreeMap<String, RleMask> {
    states
        .iter()
        .filter_map(|(id, s)| s.current_mask().map(|m| (id.clone(), m.clone())))
        .collect()
}
