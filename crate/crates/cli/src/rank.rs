//! `rank-train` and `rank-apply`.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::Args;
use clickseg::campaign::{read_jsonl, replay, status_name};
use clickseg::ranker::{
    evaluate, extract_features, train as train_forest, train_test_split, Forest, ForestParams, LabeledSample,
    NUM_FEATURES,
};
use clickseg_server::config::{EVENTS_FILE, RANKER_FILE};

use crate::error::CliError;
use crate::{create_dir, write_json, Globals};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// samples.jsonl files, or `simulate` cell directories containing one. Repeatable.
    #[arg(long, required = true, num_args = 1..)]
    pub samples: Vec<PathBuf>,
    /// Output directory for model.json, evaluation.json and ranking_curve.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of samples used for training; the rest is held out.
    #[arg(long, default_value_t = 0.01)]
    pub train_fraction: f64,
    /// Use only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Trees in the forest.
    #[arg(long, default_value_t = ForestParams::default().n_trees)]
    pub trees: usize,
    /// Maximum tree depth.
    #[arg(long, default_value_t = ForestParams::default().max_depth)]
    pub max_depth: usize,
    /// Minimum samples per leaf.
    #[arg(long, default_value_t = ForestParams::default().min_leaf)]
    pub min_leaf: usize,
    /// Features tried at each split.
    #[arg(long, default_value_t = ForestParams::default().features_per_split)]
    pub features_per_split: usize,
}

fn read_samples(path: &Path) -> Result<Vec<LabeledSample>, CliError> {
    let file = if path.is_dir() {
        path.join("samples.jsonl")
    } else {
        path.to_path_buf()
    };
    let f = std::fs::File::open(&file).map_err(|e| CliError::invalid(format!("{}: {e}", file.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: LabeledSample =
            serde_json::from_str(&line).map_err(|e| CliError::invalid(format!("{}:{}: {e}", file.display(), i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn train(a: TrainArgs, g: Globals) -> Result<(), CliError> {
    let seed = g.seed.unwrap_or(0);
    let params = ForestParams {
        n_trees: a.trees,
        max_depth: a.max_depth,
        min_leaf: a.min_leaf,
        features_per_split: a.features_per_split,
        seed,
    };
    let mut problems = Vec::new();
    if let Err(e) = params.validate() {
        problems.push(e.to_string());
    }
    if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
        problems.push("--train-fraction must be in (0, 1)".into());
    }
    let mut samples = Vec::new();
    for p in &a.samples {
        match read_samples(p) {
            Ok(s) => samples.extend(s),
            Err(CliError::Validation(v)) => problems.extend(v),
            Err(e) => return Err(e),
        }
    }
    if let Some(n) = a.limit {
        samples.truncate(n);
    }
    let unlabeled = samples.iter().filter(|s| s.target.is_none()).count();
    if unlabeled > 0 {
        problems.push(format!("{unlabeled} samples have no IoU target"));
    }
    if problems.is_empty() && samples.len() < 4 {
        problems.push(format!("need at least 4 samples, got {}", samples.len()));
    }
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }

    let x: Vec<[f64; NUM_FEATURES]> = samples.iter().map(|s| s.features.to_array()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.target.unwrap_or_default()).collect();
    let (tr, te) = train_test_split(x.len(), a.train_fraction, seed);
    if te.len() < 2 {
        return Err(CliError::invalid(
            "held-out set has fewer than 2 samples; lower --train-fraction",
        ));
    }
    let pick = |idx: &[usize]| -> (Vec<[f64; NUM_FEATURES]>, Vec<f64>) {
        (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| y[i]).collect())
    };
    let (xt, yt) = pick(&tr);
    let (xe, ye) = pick(&te);
    let forest = train_forest(&xt, &yt, &params, g.workers_or(1))?;
    let eval = evaluate(&forest, &xe, &ye, seed)?;

    let out = create_dir(&a.out)?;
    forest.save(out.join("model.json"))?;
    write_json(&out.join("evaluation.json"), &eval)?;
    let mut w = csv::Writer::from_path(out.join("ranking_curve.csv"))?;
    w.write_record(["percent", "count", "mean_iou"])?;
    for p in &eval.curve {
        w.write_record([p.percent.to_string(), p.count.to_string(), format!("{:.6}", p.mean_iou)])?;
    }
    w.flush()?;
    eprintln!(
        "trained on {} samples, held out {}: spearman {:.3}, top half {:.4}, bottom half {:.4}",
        xt.len(),
        xe.len(),
        eval.spearman,
        eval.top_half_iou,
        eval.bottom_half_iou
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    /// Model written by rank-train.
    #[arg(long)]
    pub model: PathBuf,
    /// Campaign directory whose current masks are scored.
    #[arg(long)]
    pub data_dir: PathBuf,
    /// Scores CSV; defaults to DATA_DIR/scores.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also copy the model into the campaign so the server leases the
    /// lowest-scored instances first.
    #[arg(long)]
    pub install: bool,
}

pub fn apply(a: ApplyArgs, _g: Globals) -> Result<(), CliError> {
    if !a.model.is_file() {
        return Err(CliError::invalid(format!(
            "no trained model at {}; run rank-train first",
            a.model.display()
        )));
    }
    let forest = Forest::load(&a.model).map_err(|e| CliError::invalid(format!("{}: {e}", a.model.display())))?;
    let events = a.data_dir.join(EVENTS_FILE);
    if !events.is_file() {
        return Err(CliError::invalid(format!("{} has no event log", a.data_dir.display())));
    }
    let states = replay(&read_jsonl(&events)?)?;
    let mut rows = Vec::new();
    for (id, st) in &states {
        let Some(round) = st.rounds.iter().rev().find(|r| r.mask.is_some()).map(|r| r.round) else {
            continue;
        };
        let Ok(f) = extract_features(st, round) else { continue };
        rows.push((forest.predict(&f), id, round, status_name(st.status)));
    }
    // lowest predicted quality first: the order to review in
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    let out = a.out.unwrap_or_else(|| a.data_dir.join("scores.csv"));
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["id", "round", "status", "score"])?;
    for (score, id, round, status) in &rows {
        w.write_record([
            id.to_string(),
            round.to_string(),
            status.to_string(),
            format!("{score:.6}"),
        ])?;
    }
    w.flush()?;
    if a.install {
        std::fs::copy(&a.model, a.data_dir.join(RANKER_FILE))?;
    }
    eprintln!(
        "scored {} of {} instances into {}",
        rows.len(),
        states.len(),
        out.display()
    );
    Ok(())
}
