use std::collections::BTreeMap;

use clickseg::analytics::CampaignReport;
use clickseg::annsim::AnnotatorModel;
use clickseg::campaign::{prepare_manifest, read_jsonl, replay, run_prepared, write_jsonl, ExperimentSpec};
use clickseg::maskcore::Mask;
use clickseg::refine::RefinerKind;
use clickseg::synth::{generate_dataset, SceneParams};

fn setup(
    k: usize,
    r: u32,
) -> (
    ExperimentSpec,
    Vec<clickseg::campaign::PreparedInstance>,
    BTreeMap<String, Mask>,
) {
    let (m, store) = generate_dataset(8, 21, &SceneParams::default());
    let mut spec = ExperimentSpec::new(k, r);
    spec.refiner = RefinerKind::HealingOracle;
    let prep = prepare_manifest(&m, &store, &spec, 1).unwrap();
    let gt = prep
        .iter()
        .map(|p| (p.meta.id.clone(), p.gt.clone().unwrap()))
        .collect();
    (spec, prep, gt)
}

#[test]
fn report_from_a_stored_log_matches_the_live_run() {
    let (mut spec, prep, gt) = setup(4, 3);
    spec.annotator = AnnotatorModel::campaign();
    let (_, events) = run_prepared(&spec, &prep, 1).unwrap();
    let live = CampaignReport::from_log(&events, &gt).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.jsonl");
    write_jsonl(&path, &events).unwrap();
    let stored = CampaignReport::from_log(&read_jsonl(&path).unwrap(), &gt).unwrap();
    assert_eq!(live, stored);

    let answers: usize = live.rounds.iter().map(|r| r.answers).sum();
    let logged = events
        .iter()
        .filter(|e| matches!(e.payload, clickseg::campaign::EventPayload::Answer { .. }))
        .count();
    assert_eq!(answers, logged);
    assert!(live
        .rounds
        .windows(2)
        .all(|w| w[1].mean_cumulative_clicks >= w[0].mean_cumulative_clicks));
    let q = live.quality.unwrap();
    for (p, cap) in q.points.iter().skip(1).zip([4.0, 8.0, 12.0]) {
        assert!(p.mean_clicks <= cap);
    }
    // simulated clicks carry their target areas
    assert!(live.click_order.rounds > 0 && live.click_order.skipped_rounds == 0);
    assert_eq!(live.time.answers, 0);
}

#[test]
fn noiseless_oracle_quality_curve_increases() {
    let (mut spec, prep, gt) = setup(4, 3);
    spec.annotator.click_sigma = 0.0;
    spec.annotator.min_region_side = 0.0;
    let (_, events) = run_prepared(&spec, &prep, 1).unwrap();
    let states = replay(&events).unwrap();
    let q = clickseg::analytics::quality_vs_budget_curve(&states, &gt).unwrap();
    assert_eq!(q.points.len(), 4);
    assert!(
        q.points.windows(2).all(|w| w[1].mean_iou > w[0].mean_iou),
        "{:?}",
        q.points
    );
}
