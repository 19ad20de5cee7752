//! Append-only event log and replay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::state::{InstanceMeta, InstanceState, LeaseInfo};
use super::CampaignError;
use crate::annsim::RoundAnswer;
use crate::maskcore::RleMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventPayload {
    Import {
        meta: InstanceMeta,
        initial_mask: RleMask,
    },
    Lease {
        task_id: String,
        annotator: String,
        expires_ms: u64,
    },
    Answer {
        answer: RoundAnswer,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        annotator: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        task_id: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer_hash: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        duration_ms: Option<u64>,
    },
    MaskComputed {
        mask: RleMask,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub seq: u64,
    pub ts_ms: u64,
    pub instance_id: String,
    pub round: u32,
    pub payload: EventPayload,
}

/// Applies one event to the state map. This is the only state transition
/// function; live orchestration and replay both go through it.
pub fn apply_event(states: &mut BTreeMap<String, InstanceState>, ev: &EventRecord) -> Result<(), CampaignError> {
    let id = &ev.instance_id;
    match &ev.payload {
        EventPayload::Import { meta, initial_mask } => {
            if states.contains_key(id) {
                return Err(CampaignError::Duplicate(id.clone()));
            }
            if &meta.id != id {
                return Err(CampaignError::Invalid(format!("import of {} under id {id}", meta.id)));
            }
            states.insert(id.clone(), InstanceState::new(meta.clone(), initial_mask.clone()));
        }
        payload => {
            let st = states
                .get_mut(id)
                .ok_or_else(|| CampaignError::UnknownInstance(id.clone()))?;
            match payload {
                EventPayload::Lease {
                    task_id,
                    annotator,
                    expires_ms,
                } => {
                    if !st.awaiting_answer() || st.current_round() != ev.round {
                        return Err(CampaignError::Invalid(format!("lease on {id} is not answerable")));
                    }
                    st.lease = Some(LeaseInfo {
                        task_id: task_id.clone(),
                        annotator: annotator.clone(),
                        expires_ms: *expires_ms,
                    });
                }
                EventPayload::Answer {
                    answer,
                    annotator,
                    duration_ms,
                    ..
                } => st.apply_answer(ev.round, answer.clone(), annotator.clone(), *duration_ms)?,
                EventPayload::MaskComputed { mask } => st.apply_mask(ev.round, mask.clone())?,
                EventPayload::Import { .. } => unreachable!(),
            }
        }
    }
    Ok(())
}

/// Rebuilds every instance state from a log. Sequence numbers must be
/// consecutive.
pub fn replay(log: &[EventRecord]) -> Result<BTreeMap<String, InstanceState>, CampaignError> {
    let mut states = BTreeMap::new();
    let mut expected: Option<u64> = None;
    for ev in log {
        if let Some(e) = expected {
            if ev.seq != e {
                return Err(CampaignError::Corrupt(format!("expected seq {e}, found {}", ev.seq)));
            }
        }
        expected = Some(ev.seq + 1);
        apply_event(&mut states, ev)?;
    }
    Ok(states)
}

/// Destination for appended events.
pub trait EventSink: Send {
    fn append(&mut self, ev: &EventRecord) -> Result<(), CampaignError>;
}

impl EventSink for Vec<EventRecord> {
    fn append(&mut self, ev: &EventRecord) -> Result<(), CampaignError> {
        self.push(ev.clone());
        Ok(())
    }
}

/// Discards events.
pub struct NullSink;

impl EventSink for NullSink {
    fn append(&mut self, _ev: &EventRecord) -> Result<(), CampaignError> {
        Ok(())
    }
}

/// JSON-lines file; every append is flushed and synced before returning.
pub struct JsonlLog {
    file: std::fs::File,
}

impl JsonlLog {
    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, CampaignError> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }
}

impl EventSink for JsonlLog {
    fn append(&mut self, ev: &EventRecord) -> Result<(), CampaignError> {
        use std::io::Write;
        let mut line = serde_json::to_vec(ev)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

pub fn write_jsonl(path: impl AsRef<std::path::Path>, log: &[EventRecord]) -> Result<(), CampaignError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ev in log {
        serde_json::to_writer(&mut w, ev)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<std::path::Path>) -> Result<Vec<EventRecord>, CampaignError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CampaignError::Corrupt(format!("line {}: {e}", i + 1))))
        .collect()
}

/// In-memory log that can be cloned and read while a campaign owns a handle.
#[derive(Debug, Clone, Default)]
pub struct MemoryLog {
    inner: std::sync::Arc<std::sync::Mutex<Vec<EventRecord>>>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<EventRecord> {
        self.inner.lock().expect("log lock").clone()
    }

    pub fn take(&self) -> Vec<EventRecord> {
        std::mem::take(&mut *self.inner.lock().expect("log lock"))
    }
}

impl EventSink for MemoryLog {
    fn append(&mut self, ev: &EventRecord) -> Result<(), CampaignError> {
        self.inner.lock().expect("log lock").push(ev.clone());
        Ok(())
    }
}
