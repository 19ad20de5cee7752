use serde::{Deserialize, Serialize};

use super::CampaignError;
use crate::annsim::RoundAnswer;
use crate::cropgeom::CropTransform;
use crate::maskcore::{BBox, RleMask};

/// Static description of an instance inside a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub id: String,
    pub class: String,
    pub image_id: String,
    pub image_ref: String,
    /// Reference to the ground-truth mask, absent in live campaigns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_ref: Option<String>,
    /// Box shown to the annotator, in image space.
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub transform: CropTransform,
    pub max_rounds: u32,
    pub max_clicks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Accepted,
    Skipped,
    Exhausted,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub answer: RoundAnswer,
    /// Mask after this round's answer (canvas space). Pending until refined for
    /// click answers; never present for skips.
    pub mask: Option<RleMask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaseInfo {
    pub task_id: String,
    pub annotator: String,
    pub expires_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceState {
    pub meta: InstanceMeta,
    /// Box-only mask shown in round 1.
    pub initial_mask: RleMask,
    pub rounds: Vec<RoundRecord>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lease: Option<LeaseInfo>,
}

impl InstanceState {
    pub fn new(meta: InstanceMeta, initial_mask: RleMask) -> Self {
        Self {
            meta,
            initial_mask,
            rounds: Vec::new(),
            status: Status::Active,
            lease: None,
        }
    }

    /// The round awaiting an answer or a refined mask.
    pub fn current_round(&self) -> u32 {
        match self.rounds.last() {
            Some(r) if self.awaiting_mask() || self.status.is_terminal() => r.round,
            Some(r) => r.round + 1,
            None => 1,
        }
    }

    /// A click answer was recorded but its mask is not computed yet.
    pub fn awaiting_mask(&self) -> bool {
        matches!(self.rounds.last(), Some(r) if matches!(r.answer, RoundAnswer::Clicks { .. }) && r.mask.is_none())
    }

    /// Active and waiting for an annotator answer.
    pub fn awaiting_answer(&self) -> bool {
        self.status == Status::Active && !self.awaiting_mask()
    }

    /// The most recent mask: the last round's mask, or the initial one.
    /// Skipped instances have none.
    pub fn current_mask(&self) -> Option<&RleMask> {
        if self.status == Status::Skipped {
            return None;
        }
        self.rounds
            .iter()
            .rev()
            .find_map(|r| r.mask.as_ref())
            .or(Some(&self.initial_mask))
    }

    /// Mask after round `r` (`0` is the initial mask).
    pub fn mask_after(&self, r: u32) -> Option<&RleMask> {
        if r == 0 {
            return Some(&self.initial_mask);
        }
        self.rounds.iter().find(|rec| rec.round == r)?.mask.as_ref()
    }

    /// Mask shown to the annotator at the start of round `r`.
    pub fn mask_before(&self, r: u32) -> Option<&RleMask> {
        if r <= 1 {
            return Some(&self.initial_mask);
        }
        self.mask_after(r - 1)
    }

    pub fn total_clicks(&self) -> usize {
        self.rounds.iter().map(|r| r.answer.clicks().len()).sum()
    }

    pub(crate) fn apply_answer(
        &mut self,
        round: u32,
        answer: RoundAnswer,
        annotator: Option<String>,
        duration_ms: Option<u64>,
    ) -> Result<(), CampaignError> {
        let id = &self.meta.id;
        if self.status.is_terminal() {
            return Err(CampaignError::Terminal(id.clone()));
        }
        if self.awaiting_mask() {
            return Err(CampaignError::AwaitingMask(id.clone()));
        }
        let expected = self.current_round();
        if round != expected {
            return Err(CampaignError::WrongRound {
                id: id.clone(),
                expected,
                got: round,
            });
        }
        let n = answer.clicks().len();
        if n > self.meta.max_clicks {
            return Err(CampaignError::TooManyClicks {
                got: n,
                max: self.meta.max_clicks,
            });
        }
        if let RoundAnswer::Clicks { clicks } = &answer {
            if clicks.is_empty() {
                return Err(CampaignError::Invalid("a click answer needs at least one click".into()));
            }
            let outer = self.meta.transform.outer as f64;
            if clicks
                .iter()
                .any(|c| !(c.x >= 0.0 && c.y >= 0.0 && c.x < outer && c.y < outer) || c.round != round)
            {
                return Err(CampaignError::Invalid(
                    "click outside the canvas or from another round".into(),
                ));
            }
        }
        let mask = match &answer {
            RoundAnswer::ZeroClicks => self.current_mask().cloned(),
            _ => None,
        };
        self.status = match &answer {
            RoundAnswer::ZeroClicks => Status::Accepted,
            RoundAnswer::Skip => Status::Skipped,
            RoundAnswer::Clicks { .. } => Status::Active,
        };
        self.rounds.push(RoundRecord {
            round,
            answer,
            mask,
            annotator,
            duration_ms,
        });
        self.lease = None;
        Ok(())
    }

    pub(crate) fn apply_mask(&mut self, round: u32, mask: RleMask) -> Result<(), CampaignError> {
        if !self.awaiting_mask() || self.rounds.last().map(|r| r.round) != Some(round) {
            return Err(CampaignError::UnexpectedMask {
                id: self.meta.id.clone(),
                round,
            });
        }
        let outer = self.meta.transform.outer;
        if mask.w != outer || mask.h != outer {
            return Err(CampaignError::Invalid(format!(
                "mask is {}x{}, canvas is {outer}x{outer}",
                mask.w, mask.h
            )));
        }
        self.rounds.last_mut().unwrap().mask = Some(mask);
        if round >= self.meta.max_rounds {
            self.status = Status::Exhausted;
        }
        Ok(())
    }
}
