//! Headline checks, one PASS/FAIL line each with the measured values.
//!
//! Runs as a plain binary (`harness = false`) so the lines always print.
//! Exits non-zero when a check fails, unless it is listed in
//! `KNOWN_GAPS`, which holds checks this implementation is known not to
//! meet; those still print FAIL.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clickseg::annsim::{simulate_round, AnnotatorModel, Placement, RoundAnswer};
use clickseg::campaign::{
    final_mask_map, final_masks, load_manifest, prepare_manifest, read_jsonl, replay, run_prepared, ExperimentReport,
    ExperimentSpec, PreparedInstance,
};
use clickseg::cropgeom::GeometryProfile;
use clickseg::maskcore::{
    boundary_f, boundary_pixels, connected_components, distance_transform, iou, rle_decode, rle_encode, Connectivity,
    Mask,
};
use clickseg::ranker::{evaluate, samples_from_states, train, train_test_split, ForestParams, NUM_FEATURES};
use clickseg::refine::{healing_oracle_refine, RefinerKind};
use clickseg::synth::{generate_dataset, write_dataset, SceneParams};
use clickseg_server::fuzz::{self, FuzzParams};
use clickseg_server::{
    create_campaign, open_campaign, spawn, AppState, CampaignConfig, ManualClock, ServerConfig, StateSnapshot,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Checks known to fail here; see the project notes. Empty when all pass.
const KNOWN_GAPS: &[&str] = &[];

/// Size of the synthetic scene set used by the simulation checks.
const SCENES: usize = 200;
const DATASET_SEED: u64 = 0;

struct Outcome {
    name: &'static str,
    pass: bool,
}

fn record(out: &mut Vec<Outcome>, name: &'static str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    out.push(Outcome { name, pass });
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------- metrics

fn random_mask(rng: &mut impl Rng, w: usize, h: usize) -> Mask {
    match rng.random_range(0..4) {
        0 => {
            let p = rng.random::<f64>();
            Mask::from_fn(w, h, |_, _| rng.random_bool(p))
        }
        1 => {
            let discs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
                .map(|_| {
                    (
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                        rng.random_range(1.0..10.0),
                    )
                })
                .collect();
            Mask::from_fn(w, h, |x, y| {
                discs
                    .iter()
                    .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
            })
        }
        2 => Mask::new(w, h),
        _ => Mask::from_fn(w, h, |_, _| true),
    }
}

fn brute_iou(a: &Mask, b: &Mask) -> f64 {
    let (mut i, mut u) = (0usize, 0usize);
    for (&p, &q) in a.bits().iter().zip(b.bits()) {
        i += (p && q) as usize;
        u += (p || q) as usize;
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

fn brute_boundary(m: &Mask) -> Vec<(i64, i64)> {
    let (w, h) = m.dims();
    let on = |x: i64, y: i64| m.get_signed(x, y);
    (0..h as i64)
        .flat_map(|y| (0..w as i64).map(move |x| (x, y)))
        .filter(|&(x, y)| on(x, y) && !(on(x - 1, y) && on(x + 1, y) && on(x, y - 1) && on(x, y + 1)))
        .collect()
}

fn brute_boundary_f(p: &Mask, g: &Mask, tol: f64) -> f64 {
    let (bp, bg) = (brute_boundary(p), brute_boundary(g));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let frac = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        let hits = from
            .iter()
            .filter(|&&(x, y)| {
                to.iter()
                    .any(|&(u, v)| ((x - u).pow(2) + (y - v).pow(2)) as f64 <= tol * tol)
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let (pr, rc) = (frac(&bp, &bg), frac(&bg, &bp));
    if pr + rc == 0.0 {
        0.0
    } else {
        2.0 * pr * rc / (pr + rc)
    }
}

/// Flood fill from every unvisited pixel.
fn brute_components(m: &Mask, conn: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = m.dims();
    let steps: &[(i64, i64)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) || seen[y * w + x] {
                continue;
            }
            seen[y * w + x] = true;
            let mut stack = vec![(x, y)];
            let mut comp = Vec::new();
            while let Some((cx, cy)) = stack.pop() {
                comp.push((cx, cy));
                for &(dx, dy) in steps {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if m.get_signed(nx, ny) && !seen[ny as usize * w + nx as usize] {
                        seen[ny as usize * w + nx as usize] = true;
                        stack.push((nx as usize, ny as usize));
                    }
                }
            }
            comp.sort_by_key(|&(x, y)| (y, x));
            out.push(comp);
        }
    }
    out.sort();
    out
}

fn check_metrics(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    let mut mismatches = 0usize;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let a = random_mask(&mut rng, w, h);
        let p = rng.random::<f64>() * 0.3;
        let b = Mask::from_fn(w, h, |x, y| a.get(x, y) ^ rng.random_bool(p));

        worst = worst.max((iou(&a, &b).unwrap() - brute_iou(&a, &b)).abs());
        for tol in [0.0, 1.0, 2.5, 5.0] {
            worst = worst.max((boundary_f(&a, &b, tol).unwrap() - brute_boundary_f(&a, &b, tol)).abs());
        }
        let bp: Vec<(i64, i64)> = boundary_pixels(&a)
            .iter_set()
            .map(|(x, y)| (x as i64, y as i64))
            .collect();
        let mut want = brute_boundary(&a);
        want.sort_by_key(|&(x, y)| (y, x));
        let mut got = bp;
        got.sort_by_key(|&(x, y)| (y, x));
        mismatches += (got != want) as usize;

        match distance_transform(&a) {
            Ok(field) => {
                let set: Vec<(usize, usize)> = a.iter_set().collect();
                for y in 0..h {
                    for x in 0..w {
                        let best = set
                            .iter()
                            .map(|&(u, v)| (x as f64 - u as f64).powi(2) + (y as f64 - v as f64).powi(2))
                            .fold(f64::INFINITY, f64::min);
                        worst = worst.max((field.sq(x, y) - best).abs());
                    }
                }
            }
            Err(_) => mismatches += (!a.is_blank()) as usize,
        }
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let mut got: Vec<Vec<(usize, usize)>> = connected_components(&a, conn)
                .into_iter()
                .map(|r| {
                    let mut p = r.pixels;
                    p.sort_by_key(|&(x, y)| (y, x));
                    p
                })
                .collect();
            got.sort();
            mismatches += (got != brute_components(&a, conn)) as usize;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    record(
        out,
        "metrics exactness",
        worst <= 1e-9 && mismatches == 0 && secs < 30.0,
        format!("1000 masks, max |err| {worst:.1e}, {mismatches} structural mismatches, {secs:.1}s (limit 30s)"),
    );
}

fn check_rle(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut bad = 0;
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
        let m = random_mask(&mut rng, w, h);
        let r = rle_encode(&m);
        // reference: run lengths of the flat bit order, starting with zeros
        let mut runs = vec![0u64];
        let mut cur = false;
        for &b in m.bits() {
            if b != cur {
                runs.push(0);
                cur = b;
            }
            *runs.last_mut().unwrap() += 1;
        }
        bad += (r.counts != runs || rle_decode(&r).unwrap() != m) as usize;
    }
    let zeros = rle_encode(&Mask::new(2, 2)).counts;
    let ones = rle_encode(&Mask::from_fn(2, 2, |_, _| true)).counts;
    let fixtures = zeros == [4] && ones == [0, 4];
    record(
        out,
        "rle codec",
        bad == 0 && fixtures,
        format!("{bad}/1000 round-trip failures; 2x2 empty {zeros:?}, 2x2 full {ones:?}"),
    );
}

// ---------------------------------------------------------------- simulation

/// A 128×128 object with `n` separated 6×6 error squares, some missed
/// inside the object and some spilled outside it.
fn constructed(n: usize, rng: &mut impl Rng) -> (Mask, Mask) {
    let gt = Mask::from_fn(128, 128, |x, y| (24..104).contains(&x) && (24..104).contains(&y));
    let mut spots: Vec<(usize, usize, bool)> = Vec::new();
    for i in 0..4 {
        for j in 0..4 {
            spots.push((34 + 18 * i, 34 + 18 * j, false));
        }
    }
    for i in 0..7 {
        spots.push((4 + 17 * i, 6, true));
        spots.push((4 + 17 * i, 114, true));
    }
    for i in (1..spots.len()).rev() {
        spots.swap(i, rng.random_range(0..=i));
    }
    let mut pred = gt.clone();
    for &(x0, y0, outside) in &spots[..n] {
        for y in y0..y0 + 6 {
            for x in x0..x0 + 6 {
                pred.set(x, y, outside);
            }
        }
    }
    (gt, pred)
}

fn check_healing(out: &mut Vec<Outcome>) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut cases, mut bad) = (0, Vec::new());
    for n in 1..=10 {
        for k in 1..=4 {
            for rep in 0..3 {
                let (gt, mut pred) = constructed(n, &mut rng);
                let model = AnnotatorModel {
                    click_sigma: 0.0,
                    min_region_side: 0.0,
                    max_clicks_per_round: k,
                    placement: Placement::RegionCentre,
                    ..AnnotatorModel::blueprint()
                };
                let need = n.div_ceil(k) as u32;
                let mut last = iou(&pred, &gt).unwrap();
                let mut clicks = Vec::new();
                let mut reached = None;
                for r in 1..=need + 1 {
                    let mut srng = ChaCha8Rng::seed_from_u64(rep);
                    match simulate_round(&pred, &gt, &model, r, &mut srng).unwrap() {
                        RoundAnswer::Clicks { clicks: c } => clicks.extend(c),
                        _ => break,
                    }
                    pred = healing_oracle_refine(&gt, &pred, &clicks).unwrap();
                    let now = iou(&pred, &gt).unwrap();
                    if now < last {
                        bad.push(format!("n{n} k{k}: IoU fell in round {r}"));
                    }
                    last = now;
                    if now == 1.0 && reached.is_none() {
                        reached = Some(r);
                    }
                }
                if reached.is_none_or(|r| r > need) {
                    bad.push(format!("n{n} k{k}: reached 1.0 at {reached:?}, bound {need}"));
                }
                cases += 1;
            }
        }
    }
    record(
        out,
        "healing monotonicity",
        bad.is_empty(),
        format!(
            "{cases} constructed instances, {} violations {:?}",
            bad.len(),
            bad.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

struct Lab {
    prepared: Vec<PreparedInstance>,
    base: ExperimentSpec,
}

impl Lab {
    fn new() -> Self {
        let (m, store) = generate_dataset(SCENES, DATASET_SEED, &SceneParams::default());
        let base = ExperimentSpec::new(3, 3);
        let prepared = prepare_manifest(&m, &store, &base, workers()).unwrap();
        Lab { prepared, base }
    }

    fn run(&self, f: impl FnOnce(&mut ExperimentSpec)) -> ExperimentReport {
        let mut s = self.base.clone();
        s.refiner = RefinerKind::HealingOracle;
        f(&mut s);
        let (r, _) = run_prepared(&s, &self.prepared, workers()).unwrap();
        assert!(r.failures.is_empty(), "{:?}", r.failures);
        r
    }
}

fn check_region_vs_boundary(lab: &Lab, out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let centre = lab
        .run(|s| s.annotator.placement = Placement::RegionCentre)
        .final_miou();
    let boundary = lab.run(|s| s.annotator.placement = Placement::Boundary).final_miou();
    let secs = t.elapsed().as_secs_f64();
    record(
        out,
        "region vs boundary",
        centre - boundary >= 0.01 && secs < 120.0,
        format!(
            "σ=3, 3x3 healing oracle, {SCENES} scenes: region-centre {centre:.4}, boundary {boundary:.4}, margin {:+.2}% (need ≥ 1%), {secs:.1}s",
            100.0 * (centre - boundary)
        ),
    );
}

fn check_ablations(lab: &Lab, out: &mut Vec<Outcome>) {
    let sig: Vec<f64> = [0.0, 3.0, 6.0]
        .iter()
        .map(|&v| lab.run(|s| s.annotator.click_sigma = v).final_miou())
        .collect();
    let side: Vec<f64> = [0.0, 20.0, 30.0]
        .iter()
        .map(|&v| lab.run(|s| s.annotator.min_region_side = v).final_miou())
        .collect();
    let gaps = |v: &[f64]| v.windows(2).map(|w| w[0] - w[1]).collect::<Vec<_>>();
    let (gs, gm) = (gaps(&sig), gaps(&side));
    let ok = gs.iter().chain(&gm).all(|&g| g >= 0.005);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" > ");
    let fmtg = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{:.2}%", 100.0 * x))
            .collect::<Vec<_>>()
            .join(", ")
    };
    record(
        out,
        "noise ablations",
        ok,
        format!(
            "σ 0/3/6: {} (gaps {}); min_side 0/20/30: {} (gaps {}); need each gap ≥ 0.5%",
            fmt(&sig),
            fmtg(&gs),
            fmt(&side),
            fmtg(&gm)
        ),
    );
}

fn check_clicks_rounds(lab: &Lab, out: &mut Vec<Outcome>) {
    let geo = |k: usize, r: u32| {
        lab.run(|s| {
            s.refiner = RefinerKind::geodesic();
            s.clicks_per_round = k;
            s.rounds = r;
        })
    };
    let (a, b) = (geo(3, 3), geo(1, 9));
    let at = |rep: &ExperimentReport, clicks: usize| {
        rep.aggregates
            .iter()
            .find(|x| x.nominal_clicks == clicks)
            .map_or(f64::NAN, |x| x.mean_iou)
    };
    let (fa, fb) = (a.final_miou(), b.final_miou());
    let gain_a = at(&a, 9) - at(&a, 3);
    let gain_b = at(&b, 9) - at(&b, 3);
    record(
        out,
        "clicks x rounds",
        fa >= fb - 0.005 && gain_a >= 0.02 && gain_b >= 0.02,
        format!(
            "geodesic refiner: 3x3 {fa:.4} vs 1x9 {fb:.4} (need ≥ 1x9 - 0.5%); 9 vs 3 clicks {:+.2}% on 3x3, {:+.2}% on 1x9 (need ≥ 2%)",
            100.0 * gain_a,
            100.0 * gain_b
        ),
    );
}

fn check_ranker(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let (m, store) = generate_dataset(SCENES, DATASET_SEED + 1, &SceneParams::default());
    let mut spec = ExperimentSpec::new(4, 3);
    spec.annotator = AnnotatorModel::campaign();
    spec.refiner = RefinerKind::geodesic();
    let prepared = prepare_manifest(&m, &store, &spec, workers()).unwrap();
    let gt: BTreeMap<String, Mask> = prepared
        .iter()
        .map(|p| (p.meta.id.clone(), p.gt.clone().unwrap()))
        .collect();
    let mut samples = Vec::new();
    let mut run = 0;
    while samples.len() < 10_000 {
        spec.annotator.rng_seed = run;
        run += 1;
        let (_, events) = run_prepared(&spec, &prepared, workers()).unwrap();
        samples.extend(samples_from_states(&replay(&events).unwrap(), &gt).unwrap());
    }
    samples.truncate(10_000);
    let x: Vec<[f64; NUM_FEATURES]> = samples.iter().map(|s| s.features.to_array()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.target.unwrap()).collect();
    let (tr, te) = train_test_split(x.len(), 0.01, 5);
    let pick = |ix: &[usize]| {
        (
            ix.iter().map(|&i| x[i]).collect::<Vec<_>>(),
            ix.iter().map(|&i| y[i]).collect::<Vec<_>>(),
        )
    };
    let ((xt, yt), (xe, ye)) = (pick(&tr), pick(&te));
    let params = ForestParams {
        seed: 5,
        ..Default::default()
    };
    let forest = train(&xt, &yt, &params, workers()).unwrap();
    let ev = evaluate(&forest, &xe, &ye, 5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst_rise = ev
        .curve
        .windows(2)
        .map(|w| w[1].mean_iou - w[0].mean_iou)
        .fold(f64::NEG_INFINITY, f64::max);
    let top = |pct: u32| {
        ev.curve
            .iter()
            .find(|p| p.percent == pct)
            .map_or(f64::NAN, |p| p.mean_iou)
    };
    record(
        out,
        "ranker",
        ev.spearman >= 0.6 && ev.top_half_iou - ev.bottom_half_iou >= 0.05 && worst_rise <= 0.01 && secs < 120.0,
        format!(
            "{} train / {} held out from {run} runs: spearman {:.3} (need ≥ 0.6), top half {:.4} vs bottom {:.4} (need +5%), \
             largest curve rise {:+.4} (limit 0.01), top 70% {:.4}, all {:.4}, {secs:.1}s (limit 120s)",
            xt.len(),
            xe.len(),
            ev.spearman,
            ev.top_half_iou,
            ev.bottom_half_iou,
            worst_rise,
            top(70),
            top(100)
        ),
    );
}

fn check_replay(lab: &Lab, out: &mut Vec<Outcome>) {
    let mut spec = lab.base.clone();
    spec.refiner = RefinerKind::geodesic();
    let runs: Vec<_> = [1, 4, 8]
        .iter()
        .map(|&w| run_prepared(&spec, &lab.prepared, w).unwrap())
        .collect();
    let (report, events) = &runs[0];
    let replayed = final_masks(&replay(events).unwrap());
    let live = final_mask_map(report);
    let same_workers = runs.iter().all(|(r, e)| r == report && e == events);
    record(
        out,
        "replay determinism",
        replayed == live && live.len() == lab.prepared.len() && same_workers,
        format!(
            "{} instances, {} events; replay matches live masks: {}; 1/4/8 workers identical: {same_workers}",
            live.len(),
            events.len(),
            replayed == live
        ),
    );
}

// ---------------------------------------------------------------- server

fn check_server(out: &mut Vec<Outcome>) {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    write_dataset(&data, 12, 9, &SceneParams::default()).unwrap();
    let mut cfg = CampaignConfig::new("fuzz", &data);
    cfg.profile = GeometryProfile::Blueprint;
    let dir = root.path().join("campaign");
    create_campaign(&dir, &cfg, &load_manifest(data.join("manifest.json")).unwrap(), 1, 0).unwrap();
    let server = ServerConfig {
        data_dir: dir.clone(),
        ..Default::default()
    };
    let clock = Arc::new(ManualClock::new(1_000));
    let svc = open_campaign(&dir, &server, 0).unwrap();
    let addr = spawn(AppState::new(svc, clock.clone()), "127.0.0.1:0").unwrap();
    let base = format!("http://{addr}");
    let expire = {
        let clock = clock.clone();
        move || clock.advance(120_001)
    };
    let report = fuzz::run(
        &base,
        &FuzzParams {
            annotators: 16,
            steps: 40,
            seed: 21,
        },
        &expire,
    );
    let agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .new_agent();
    let live: StateSnapshot = agent
        .get(format!("{base}/api/v1/campaign/state"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    let log = read_jsonl(dir.join("events.jsonl")).unwrap();
    let replay_ok = replay(&log).map(|s| s == live.instances).unwrap_or(false) && live.next_seq == log.len() as u64;
    let five = report.by_status.range(500..).map(|(_, n)| n).sum::<usize>() + report.failures.len();
    record(
        out,
        "server integrity",
        replay_ok && five == 0 && report.accepted_answers > 0,
        format!(
            "16 annotators, {} requests {:?}, {} answers accepted, {} events; replay equals live state: {replay_ok}; 5xx or dropped: {five}",
            report.requests,
            report.by_status,
            report.accepted_answers,
            log.len()
        ),
    );
}

// ---------------------------------------------------------------- end to end

fn clickseg(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_clickseg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("clickseg {}: {}", args[0], String::from_utf8_lossy(&o.stderr)))
    }
}

fn csv_rows(p: &Path) -> usize {
    std::fs::read_to_string(p).map_or(0, |t| t.lines().count().saturating_sub(1))
}

fn check_end_to_end(out: &mut Vec<Outcome>) {
    let t = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let p = |s: &str| root.path().join(s).to_string_lossy().into_owned();
    let w = workers().to_string();
    let steps: Result<(), String> = (|| {
        clickseg(&["synth", "--out", &p("data"), "--count", &SCENES.to_string()])?;
        clickseg(&[
            "import",
            "--manifest",
            &p("data/manifest.json"),
            "--data-dir",
            &p("campaign"),
        ])?;
        clickseg(&[
            "simulate",
            "--manifest",
            &p("campaign/manifest.json"),
            "--image-root",
            &p("data"),
            "--out",
            &p("sim"),
            "--grid",
            "4x3",
            "--annotator",
            "campaign",
            "--profile",
            "campaign",
            "--workers",
            &w,
        ])?;
        clickseg(&[
            "rank-train",
            "--samples",
            &p("sim/4x3"),
            "--out",
            &p("ranker"),
            "--train-fraction",
            "0.2",
        ])?;
        clickseg(&["report", "--data-dir", &p("sim/4x3"), "--out", &p("reports")])?;
        Ok(())
    })();
    let secs = t.elapsed().as_secs_f64();
    let fig4 = csv_rows(&root.path().join("sim/aggregate.csv"));
    let quality = csv_rows(&root.path().join("reports/quality.csv"));
    let fig6 = csv_rows(&root.path().join("ranker/ranking_curve.csv"));
    let ok = steps.is_ok() && fig4 == 3 && quality == 4 && fig6 == 20 && secs < 300.0;
    record(
        out,
        "end to end",
        ok,
        match steps {
            Ok(()) => format!(
                "synth → import → simulate 4x3 → rank-train → report in {secs:.1}s (limit 300s); \
                 aggregate.csv {fig4} rows, quality.csv {quality} rows, ranking_curve.csv {fig6} rows"
            ),
            Err(e) => e,
        },
    );
}

type Check = fn(&mut Vec<Outcome>);
type LabCheck = fn(&Lab, &mut Vec<Outcome>);

fn main() {
    // `cargo test --test acceptance -- <filter>` runs the checks whose name
    // contains the filter; --list keeps test discovery working.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-')).cloned().unwrap_or_default();
    let want = |name: &str| name.contains(filter.as_str());

    let t = Instant::now();
    let mut out = Vec::new();
    let plain: [(&str, Check); 3] = [
        ("metrics exactness", check_metrics),
        ("rle codec", check_rle),
        ("healing monotonicity", check_healing),
    ];
    for (name, f) in plain {
        if want(name) {
            f(&mut out);
        }
    }
    let on_lab: [(&str, LabCheck); 4] = [
        ("region vs boundary", check_region_vs_boundary),
        ("noise ablations", check_ablations),
        ("clicks x rounds", check_clicks_rounds),
        ("replay determinism", check_replay),
    ];
    if on_lab.iter().any(|(n, _)| want(n)) {
        let lab = Lab::new();
        for (name, f) in on_lab {
            if want(name) {
                f(&lab, &mut out);
            }
        }
    }
    let rest: [(&str, Check); 3] = [
        ("ranker", check_ranker),
        ("server integrity", check_server),
        ("end to end", check_end_to_end),
    ];
    for (name, f) in rest {
        if want(name) {
            f(&mut out);
        }
    }

    let failed: Vec<&str> = out.iter().filter(|o| !o.pass).map(|o| o.name).collect();
    let unexpected: Vec<&&str> = failed.iter().filter(|n| !KNOWN_GAPS.contains(n)).collect();
    println!(
        "acceptance: {} passed, {} failed ({} known gaps) in {:.1}s",
        out.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len(),
        t.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
