//! Campaign statistics computed from instance states (replay a log first):
//! answer-type distributions, click-order and timing statistics, and quality
//! against click or time budget.
//!
//! Everything here is a pure function of the states, so analysing a replayed
//! log gives the same numbers as analysing the live campaign.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annsim::{extract_error_regions, RoundAnswer};
use crate::campaign::{replay, CampaignError, EventRecord, InstanceState, Status};
use crate::maskcore::{boundary_f, iou, rle_decode, Mask, MaskError, RleMask};

/// Boundary F-measure tolerance used by the quality curve, in canvas pixels.
pub const QUALITY_BOUNDARY_TOL: f64 = 5.0;

/// Click ordinals reported by [`ClickOrderStats::mean_area_by_ordinal`].
pub const ORDINALS: usize = 4;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-increasing areas.
pub fn exactly_ordered(areas: &[u64]) -> bool {
    areas.windows(2).all(|w| w[0] >= w[1])
}

/// Non-increasing after at most one swap of neighbouring clicks.
pub fn approximately_ordered(areas: &[u64]) -> bool {
    if exactly_ordered(areas) {
        return true;
    }
    let mut v = areas.to_vec();
    (0..v.len().saturating_sub(1)).any(|i| {
        v.swap(i, i + 1);
        let ok = exactly_ordered(&v);
        v.swap(i, i + 1);
        ok
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickOrderStats {
    /// Click rounds with area data for every click.
    pub rounds: usize,
    /// Click rounds skipped for lack of area data.
    pub skipped_rounds: usize,
    pub exact_fraction: Option<f64>,
    pub approximate_fraction: Option<f64>,
    /// Mean target area of the 1st..4th click of a round.
    pub mean_area_by_ordinal: Vec<Option<f64>>,
}

/// Areas of the error regions each click of round `r` aimed at. Recorded
/// areas win; otherwise, with ground truth, the area of the error component
/// under the click (0 when the click hit no error).
fn round_areas(st: &InstanceState, round: u32, answer: &RoundAnswer, gt: Option<&Mask>) -> Option<Vec<u64>> {
    let clicks = answer.clicks();
    if clicks.iter().all(|c| c.target_area.is_some()) {
        return Some(clicks.iter().map(|c| c.target_area.unwrap_or(0)).collect());
    }
    let gt = gt?;
    let prev = rle_decode(st.mask_before(round)?).ok()?;
    let regions = extract_error_regions(&prev, gt, 0.0).ok()?;
    let (w, h) = gt.dims();
    Some(
        clicks
            .iter()
            .map(|c| {
                let (x, y) = c.pixel();
                let (x, y) = (x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize);
                regions
                    .iter()
                    .find(|r| r.region.contains(x, y))
                    .map_or(0, |r| r.region.area as u64)
            })
            .collect(),
    )
}

pub fn click_order_stats(states: &BTreeMap<String, InstanceState>, gt: &BTreeMap<String, Mask>) -> ClickOrderStats {
    click_order_stats_with(states, gt, approximately_ordered)
}

/// Like [`click_order_stats`] with a custom "approximately ordered" predicate.
pub fn click_order_stats_with(
    states: &BTreeMap<String, InstanceState>,
    gt: &BTreeMap<String, Mask>,
    approximate: impl Fn(&[u64]) -> bool,
) -> ClickOrderStats {
    let (mut rounds, mut skipped, mut exact, mut approx) = (0usize, 0usize, 0usize, 0usize);
    let mut sums = [(0.0f64, 0usize); ORDINALS];
    for (id, st) in states {
        for rec in &st.rounds {
            if rec.answer.clicks().is_empty() {
                continue;
            }
            let Some(areas) = round_areas(st, rec.round, &rec.answer, gt.get(id)) else {
                skipped += 1;
                continue;
            };
            rounds += 1;
            exact += exactly_ordered(&areas) as usize;
            approx += approximate(&areas) as usize;
            for (s, &a) in sums.iter_mut().zip(&areas) {
                s.0 += a as f64;
                s.1 += 1;
            }
        }
    }
    let frac = |n: usize| (rounds > 0).then(|| n as f64 / rounds as f64);
    ClickOrderStats {
        rounds,
        skipped_rounds: skipped,
        exact_fraction: frac(exact),
        approximate_fraction: frac(approx),
        mean_area_by_ordinal: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
    }
}

/// Mean and 0.1/0.9 quantiles (linear interpolation between order
/// statistics), in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub q10: f64,
    pub q90: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Summary {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q10: q(0.1),
            q90: q(0.9),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    /// Answers with timing data.
    pub answers: usize,
    /// Answers without timing data (simulated campaigns), left out.
    pub excluded: usize,
    pub by_answer_type: BTreeMap<String, Summary>,
    pub by_round: BTreeMap<u32, Summary>,
    /// Keyed `class/round`.
    pub by_class_round: BTreeMap<String, Summary>,
    /// Time to the first click of a round.
    pub first_action: Option<Summary>,
    /// Gaps between consecutive clicks of a round.
    pub click_gaps: Option<Summary>,
}

/// Answer duration: the recorded duration, else the last click time.
/// Zero means no timing data.
fn answer_ms(duration: Option<u64>, answer: &RoundAnswer) -> u64 {
    duration
        .filter(|&d| d > 0)
        .unwrap_or_else(|| answer.clicks().iter().map(|c| c.t_ms).max().unwrap_or(0))
}

pub fn time_stats(states: &BTreeMap<String, InstanceState>) -> TimeStats {
    let mut by_type: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut by_round: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut by_class_round: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let (mut first, mut gaps) = (Vec::new(), Vec::new());
    let mut out = TimeStats::default();
    for st in states.values() {
        for rec in &st.rounds {
            let ms = answer_ms(rec.duration_ms, &rec.answer);
            if ms == 0 {
                out.excluded += 1;
                continue;
            }
            out.answers += 1;
            let s = ms as f64 / 1000.0;
            by_type.entry(rec.answer.kind_name().to_string()).or_default().push(s);
            by_round.entry(rec.round).or_default().push(s);
            by_class_round
                .entry(format!("{}/{}", st.meta.class, rec.round))
                .or_default()
                .push(s);
            let times: Vec<u64> = rec.answer.clicks().iter().map(|c| c.t_ms).collect();
            if let Some(&t0) = times.first() {
                first.push(t0 as f64 / 1000.0);
            }
            gaps.extend(times.windows(2).map(|w| w[1].saturating_sub(w[0]) as f64 / 1000.0));
        }
    }
    out.by_answer_type = summarize(by_type);
    out.by_round = summarize(by_round);
    out.by_class_round = summarize(by_class_round);
    out.first_action = Summary::of(&first);
    out.click_gaps = Summary::of(&gaps);
    out
}

fn summarize<K: Ord>(m: BTreeMap<K, Vec<f64>>) -> BTreeMap<K, Summary> {
    m.into_iter()
        .filter_map(|(k, v)| Summary::of(&v).map(|s| (k, s)))
        .collect()
}

/// Mask in effect after round `r`: the latest mask up to `r`, or none once the
/// instance was skipped.
fn mask_at(st: &InstanceState, r: u32) -> Option<&RleMask> {
    let mut mask = Some(&st.initial_mask);
    for rec in st.rounds.iter().take_while(|rec| rec.round <= r) {
        if rec.answer == RoundAnswer::Skip {
            return None;
        }
        if let Some(m) = &rec.mask {
            mask = Some(m);
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub round: u32,
    pub mean_clicks: f64,
    /// Mean cumulative annotation time; absent without timing data.
    pub mean_seconds: Option<f64>,
    pub mean_iou: f64,
    pub mean_boundary_f: f64,
    /// Instances with a mask at this round.
    pub instances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityCurve {
    pub points: Vec<QualityPoint>,
    /// Instances left out for lack of ground truth.
    pub missing_gt: usize,
}

/// One point per round (round 0 is the initial mask). `gt` holds canvas
/// ground truth by instance id.
pub fn quality_vs_budget_curve(
    states: &BTreeMap<String, InstanceState>,
    gt: &BTreeMap<String, Mask>,
) -> Result<QualityCurve, AnalyticsError> {
    let last = states
        .values()
        .filter_map(|s| s.rounds.last().map(|r| r.round))
        .max()
        .unwrap_or(0);
    let scored: Vec<(&InstanceState, &Mask)> = states
        .iter()
        .filter_map(|(id, st)| gt.get(id).map(|g| (st, g)))
        .collect();
    let mut curve = QualityCurve {
        points: Vec::new(),
        missing_gt: states.len() - scored.len(),
    };
    for r in 0..=last {
        let (mut n, mut clicks, mut secs, mut timed, mut si, mut sb) = (0usize, 0usize, 0.0, 0usize, 0.0, 0.0);
        for &(st, g) in &scored {
            let Some(m) = mask_at(st, r) else { continue };
            let m = rle_decode(m)?;
            n += 1;
            si += iou(&m, g)?;
            sb += boundary_f(&m, g, QUALITY_BOUNDARY_TOL)?;
            let upto = st.rounds.iter().take_while(|rec| rec.round <= r);
            clicks += upto.clone().map(|rec| rec.answer.clicks().len()).sum::<usize>();
            let ms: u64 = upto.map(|rec| answer_ms(rec.duration_ms, &rec.answer)).sum();
            if ms > 0 {
                secs += ms as f64 / 1000.0;
                timed += 1;
            }
        }
        if n == 0 {
            continue;
        }
        curve.points.push(QualityPoint {
            round: r,
            mean_clicks: clicks as f64 / n as f64,
            mean_seconds: (timed > 0).then(|| secs / timed as f64),
            mean_iou: si / n as f64,
            mean_boundary_f: sb / n as f64,
            instances: n,
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAnswers {
    pub round: u32,
    pub answers: usize,
    pub clicks_fraction: f64,
    pub zero_clicks_fraction: f64,
    pub skip_fraction: f64,
    /// Answers per click count, index = number of clicks (skips excluded).
    pub click_histogram: Vec<usize>,
    /// Mean cumulative clicks over all instances after this round.
    pub mean_cumulative_clicks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceClicks {
    pub id: String,
    pub status: Status,
    /// Cumulative clicks after rounds 1..=R.
    pub cumulative: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub instances: usize,
    pub rounds: Vec<RoundAnswers>,
    pub cumulative_clicks: Vec<InstanceClicks>,
    pub click_order: ClickOrderStats,
    pub time: TimeStats,
    /// Present when ground truth was supplied.
    pub quality: Option<QualityCurve>,
}

impl CampaignReport {
    pub fn from_log(log: &[EventRecord], gt: &BTreeMap<String, Mask>) -> Result<Self, AnalyticsError> {
        Self::from_states(&replay(log)?, gt)
    }

    pub fn from_states(
        states: &BTreeMap<String, InstanceState>,
        gt: &BTreeMap<String, Mask>,
    ) -> Result<Self, AnalyticsError> {
        let last = states
            .values()
            .filter_map(|s| s.rounds.last().map(|r| r.round))
            .max()
            .unwrap_or(0);
        let cumulative_clicks: Vec<InstanceClicks> = states
            .values()
            .map(|st| {
                let mut total = 0;
                let cumulative = (1..=last)
                    .map(|r| {
                        total += st
                            .rounds
                            .iter()
                            .find(|rec| rec.round == r)
                            .map_or(0, |rec| rec.answer.clicks().len());
                        total
                    })
                    .collect();
                InstanceClicks {
                    id: st.meta.id.clone(),
                    status: st.status,
                    cumulative,
                }
            })
            .collect();
        let mut rounds = Vec::new();
        for r in 1..=last {
            let recs: Vec<&RoundAnswer> = states
                .values()
                .filter_map(|s| s.rounds.iter().find(|rec| rec.round == r).map(|rec| &rec.answer))
                .collect();
            let n = recs.len();
            let count = |f: fn(&RoundAnswer) -> bool| recs.iter().filter(|a| f(a)).count();
            let mut hist = Vec::new();
            for a in recs.iter().filter(|a| ***a != RoundAnswer::Skip) {
                let k = a.clicks().len();
                if hist.len() <= k {
                    hist.resize(k + 1, 0);
                }
                hist[k] += 1;
            }
            let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            let idx = (r - 1) as usize;
            rounds.push(RoundAnswers {
                round: r,
                answers: n,
                clicks_fraction: frac(count(|a| matches!(a, RoundAnswer::Clicks { .. }))),
                zero_clicks_fraction: frac(count(|a| *a == RoundAnswer::ZeroClicks)),
                skip_fraction: frac(count(|a| *a == RoundAnswer::Skip)),
                click_histogram: hist,
                mean_cumulative_clicks: if cumulative_clicks.is_empty() {
                    0.0
                } else {
                    cumulative_clicks.iter().map(|c| c.cumulative[idx]).sum::<usize>() as f64
                        / cumulative_clicks.len() as f64
                },
            });
        }
        Ok(CampaignReport {
            instances: states.len(),
            rounds,
            cumulative_clicks,
            click_order: click_order_stats(states, gt),
            time: time_stats(states),
            quality: if gt.is_empty() {
                None
            } else {
                Some(quality_vs_budget_curve(states, gt)?)
            },
        })
    }

    /// `round,answers,clicks_fraction,zero_clicks_fraction,skip_fraction,mean_cumulative_clicks,click_histogram`
    /// with the histogram as `;`-separated counts.
    pub fn write_rounds_csv(&self, w: impl Write) -> Result<(), AnalyticsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "round",
            "answers",
            "clicks_fraction",
            "zero_clicks_fraction",
            "skip_fraction",
            "mean_cumulative_clicks",
            "click_histogram",
        ])?;
        for r in &self.rounds {
            let hist: Vec<String> = r.click_histogram.iter().map(|c| c.to_string()).collect();
            out.write_record([
                r.round.to_string(),
                r.answers.to_string(),
                format!("{:.6}", r.clicks_fraction),
                format!("{:.6}", r.zero_clicks_fraction),
                format!("{:.6}", r.skip_fraction),
                format!("{:.6}", r.mean_cumulative_clicks),
                hist.join(";"),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `round,mean_clicks,mean_seconds,mean_iou,mean_boundary_f,instances`;
    /// header only without ground truth.
    pub fn write_quality_csv(&self, w: impl Write) -> Result<(), AnalyticsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "round",
            "mean_clicks",
            "mean_seconds",
            "mean_iou",
            "mean_boundary_f",
            "instances",
        ])?;
        for p in self.quality.iter().flat_map(|q| &q.points) {
            out.write_record([
                p.round.to_string(),
                format!("{:.6}", p.mean_clicks),
                p.mean_seconds.map_or(String::new(), |s| format!("{s:.3}")),
                format!("{:.6}", p.mean_iou),
                format!("{:.6}", p.mean_boundary_f),
                p.instances.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `group,key,count,mean_s,q10_s,q90_s` with groups `answer_type`,
    /// `round`, `class_round`, `first_action` and `click_gap`.
    pub fn write_time_csv(&self, w: impl Write) -> Result<(), AnalyticsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["group", "key", "count", "mean_s", "q10_s", "q90_s"])?;
        let mut row = |group: &str, key: String, s: &Summary| {
            out.write_record([
                group.to_string(),
                key,
                s.count.to_string(),
                format!("{:.3}", s.mean),
                format!("{:.3}", s.q10),
                format!("{:.3}", s.q90),
            ])
        };
        let t = &self.time;
        for (k, s) in &t.by_answer_type {
            row("answer_type", k.clone(), s)?;
        }
        for (k, s) in &t.by_round {
            row("round", k.to_string(), s)?;
        }
        for (k, s) in &t.by_class_round {
            row("class_round", k.clone(), s)?;
        }
        if let Some(s) = &t.first_action {
            row("first_action", String::new(), s)?;
        }
        if let Some(s) = &t.click_gaps {
            row("click_gap", String::new(), s)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, AnalyticsError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annsim::{Click, Polarity};
    use crate::campaign::{Campaign, InstanceMeta, NullSink};
    use crate::cropgeom::make_transform;
    use crate::maskcore::BBox;

    fn meta(id: &str) -> InstanceMeta {
        let b = BBox::new(2.0, 2.0, 4.0, 4.0);
        InstanceMeta {
            id: id.into(),
            class: "c".into(),
            image_id: "im".into(),
            image_ref: "im.png".into(),
            gt_ref: None,
            bbox: b,
            transform: make_transform(&b, (8, 8), 4, 8).unwrap(),
            max_rounds: 3,
            max_clicks: 4,
        }
    }

    #[test]
    fn ordering_predicates() {
        assert!(exactly_ordered(&[100, 50, 25]));
        assert!(!exactly_ordered(&[50, 100, 25]));
        assert!(approximately_ordered(&[50, 100, 25]));
        assert!(!approximately_ordered(&[25, 50, 100]));
        assert!(exactly_ordered(&[7]) && approximately_ordered(&[7]));
        assert!(exactly_ordered(&[]));
    }

    fn click(x: f64, t_ms: u64, area: Option<u64>) -> Click {
        Click {
            t_ms,
            target_area: area,
            ..Click::new(x, 1.0, Polarity::Positive, 1)
        }
    }

    fn campaign_with(answers: Vec<(&str, RoundAnswer)>) -> BTreeMap<String, InstanceState> {
        let mut c = Campaign::new(Box::new(NullSink));
        let m = Mask::new(8, 8);
        for (id, a) in answers {
            if c.get(id).is_none() {
                c.import(meta(id), &m, 0).unwrap();
            }
            let round = c.get(id).unwrap().current_round();
            let a = match a {
                RoundAnswer::Clicks { clicks } => RoundAnswer::Clicks {
                    clicks: clicks.into_iter().map(|k| Click { round, ..k }).collect(),
                },
                other => other,
            };
            c.answer(id, round, a, 0).unwrap();
            if c.get(id).unwrap().awaiting_mask() {
                c.set_mask(id, round, &m, 0).unwrap();
            }
        }
        c.states().clone()
    }

    #[test]
    fn single_click_rounds_are_ordered() {
        let states = campaign_with(vec![
            (
                "a",
                RoundAnswer::Clicks {
                    clicks: vec![click(1.0, 0, Some(9))],
                },
            ),
            (
                "b",
                RoundAnswer::Clicks {
                    clicks: vec![click(1.0, 0, Some(3))],
                },
            ),
        ]);
        let s = click_order_stats(&states, &BTreeMap::new());
        assert_eq!(s.rounds, 2);
        assert_eq!(s.exact_fraction, Some(1.0));
        assert_eq!(s.approximate_fraction, Some(1.0));
        assert_eq!(s.mean_area_by_ordinal[0], Some(6.0));
        assert_eq!(s.mean_area_by_ordinal[1], None);
    }

    #[test]
    fn rounds_without_areas_are_skipped_and_counted() {
        let states = campaign_with(vec![(
            "a",
            RoundAnswer::Clicks {
                clicks: vec![click(1.0, 0, None)],
            },
        )]);
        let s = click_order_stats(&states, &BTreeMap::new());
        assert_eq!((s.rounds, s.skipped_rounds), (0, 1));
        assert_eq!(s.exact_fraction, None);
    }

    #[test]
    fn areas_recomputed_from_ground_truth() {
        // initial mask is empty; gt has a 2x2 block under the click
        let states = campaign_with(vec![(
            "a",
            RoundAnswer::Clicks {
                clicks: vec![click(1.5, 0, None)],
            },
        )]);
        let gt = Mask::from_fn(8, 8, |x, y| x < 2 && y < 2);
        let s = click_order_stats(&states, &BTreeMap::from([("a".to_string(), gt)]));
        assert_eq!(s.rounds, 1);
        assert_eq!(s.mean_area_by_ordinal[0], Some(4.0));
    }

    #[test]
    fn first_action_and_gaps() {
        let states = campaign_with(vec![(
            "a",
            RoundAnswer::Clicks {
                clicks: vec![click(1.0, 8000, None), click(2.0, 11000, None), click(3.0, 14000, None)],
            },
        )]);
        let t = time_stats(&states);
        assert_eq!(t.first_action.unwrap().mean, 8.0);
        let g = t.click_gaps.unwrap();
        assert_eq!((g.count, g.mean, g.q10, g.q90), (2, 3.0, 3.0, 3.0));
        assert_eq!(t.by_answer_type["clicks"].mean, 14.0);
    }

    #[test]
    fn simulated_logs_have_no_timing() {
        let states = campaign_with(vec![("a", RoundAnswer::ZeroClicks)]);
        let t = time_stats(&states);
        assert_eq!((t.answers, t.excluded), (0, 1));
        assert!(t.by_round.is_empty() && t.first_action.is_none());
        assert_eq!(time_stats(&BTreeMap::new()), TimeStats::default());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]).unwrap();
        assert_eq!((s.q10, s.q90, s.mean), (2.0, 10.0, 6.0));
        assert!(Summary::of(&[]).is_none());
    }

    #[test]
    fn report_fractions_and_cumulative_clicks() {
        let states = campaign_with(vec![
            (
                "a",
                RoundAnswer::Clicks {
                    clicks: vec![click(1.0, 0, Some(4)), click(2.0, 0, Some(2))],
                },
            ),
            ("b", RoundAnswer::ZeroClicks),
            ("c", RoundAnswer::Skip),
            (
                "a",
                RoundAnswer::Clicks {
                    clicks: vec![click(1.0, 0, Some(1))],
                },
            ),
        ]);
        let rep = CampaignReport::from_states(&states, &BTreeMap::new()).unwrap();
        assert_eq!(rep.rounds.len(), 2);
        for r in &rep.rounds {
            let sum = r.clicks_fraction + r.zero_clicks_fraction + r.skip_fraction;
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert_eq!(rep.rounds[0].answers, 3);
        assert_eq!(rep.rounds[0].click_histogram, vec![1, 0, 1]);
        assert_eq!(rep.rounds[1].answers, 1);
        assert!((rep.rounds[0].mean_cumulative_clicks - 2.0 / 3.0).abs() < 1e-12);
        assert!((rep.rounds[1].mean_cumulative_clicks - 1.0).abs() < 1e-12);
        assert_eq!(rep.cumulative_clicks[0].cumulative, vec![2, 3]);
        assert!(rep.quality.is_none());
        let mut buf = Vec::new();
        rep.write_rounds_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().ends_with(",1;0;1"));
        let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(json["instances"], 3);
    }

    #[test]
    fn quality_curve_baseline_only_without_rounds() {
        let mut c = Campaign::new(Box::new(NullSink));
        let gt = Mask::from_fn(8, 8, |x, _| x < 4);
        c.import(meta("a"), &Mask::from_fn(8, 8, |x, _| x < 2), 0).unwrap();
        let gts = BTreeMap::from([("a".to_string(), gt), ("zz".to_string(), Mask::new(8, 8))]);
        let q = quality_vs_budget_curve(c.states(), &gts).unwrap();
        assert_eq!(q.points.len(), 1);
        assert_eq!(q.points[0].round, 0);
        assert!((q.points[0].mean_iou - 0.5).abs() < 1e-12);
        assert_eq!(q.missing_gt, 0);
    }

    #[test]
    fn empty_report_writes_headers() {
        let rep = CampaignReport::from_states(&BTreeMap::new(), &BTreeMap::new()).unwrap();
        let mut buf = Vec::new();
        rep.write_quality_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
        let mut buf = Vec::new();
        rep.write_time_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
