//! Mask-quality ranking: five process features per round and a bagged
//! regression forest that predicts the round's IoU.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annsim::{substream, RoundAnswer};
use crate::campaign::InstanceState;
use crate::maskcore::{iou, rle_decode, Mask};
use crate::par::for_each_ordered;

pub const NUM_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["f1_clicks", "f2_round", "f3_iou_prev", "f4_max_dist", "f5_mean_dist"];
pub const FORMAT_NAME: &str = "clickseg-forest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("no training samples")]
    Empty,
    #[error("target {0} outside [0, 1]")]
    InvalidTarget(f64),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("instance {id} has no mask for round {round}")]
    NoMask { id: String, round: u32 },
    #[error("invalid hyper-parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported model format {format} v{version}")]
    Format { format: String, version: u32 },
    #[error("prediction and truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Mask(#[from] crate::maskcore::MaskError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankFeatures {
    /// Clicks in the round.
    pub f1: f64,
    /// Round number.
    pub f2: f64,
    /// IoU between the masks before and after the round.
    pub f3: f64,
    /// Largest click distance to the previous mask's boundary.
    pub f4: f64,
    /// Mean click distance to the previous mask's boundary.
    pub f5: f64,
}

impl RankFeatures {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [self.f1, self.f2, self.f3, self.f4, self.f5]
    }
}

/// Features of `round` for one instance. Zero-click rounds have `f4 = f5 = 0`.
/// When the previous mask is empty, distances are measured to nothing and are
/// capped at the canvas diagonal.
pub fn extract_features(state: &InstanceState, round: u32) -> Result<RankFeatures, RankError> {
    let no_mask = || RankError::NoMask {
        id: state.meta.id.clone(),
        round,
    };
    let rec = state.rounds.iter().find(|r| r.round == round).ok_or_else(no_mask)?;
    let prev = rle_decode(state.mask_before(round).ok_or_else(no_mask)?)?;
    let cur = rle_decode(rec.mask.as_ref().ok_or_else(no_mask)?)?;
    let clicks = rec.answer.clicks();
    let f3 = iou(&prev, &cur)?;
    let (f4, f5) = click_distances(&prev, clicks.iter().map(|c| c.pixel()));
    Ok(RankFeatures {
        f1: clicks.len() as f64,
        f2: round as f64,
        f3,
        f4,
        f5,
    })
}

/// Max and mean Euclidean distance from pixels to the boundary of `mask`.
pub fn click_distances(mask: &Mask, pixels: impl Iterator<Item = (i64, i64)>) -> (f64, f64) {
    let (w, h) = mask.dims();
    let cap = ((w * w + h * h) as f64).sqrt();
    // a handful of clicks: scanning the boundary beats a full distance transform
    let mut boundary = Vec::new();
    if let Some((x0, y0, x1, y1)) = mask.pixel_bounds() {
        for y in y0 as i64..=y1 as i64 {
            for x in x0 as i64..=x1 as i64 {
                if mask.get_signed(x, y)
                    && !(mask.get_signed(x - 1, y)
                        && mask.get_signed(x + 1, y)
                        && mask.get_signed(x, y - 1)
                        && mask.get_signed(x, y + 1))
                {
                    boundary.push((x, y));
                }
            }
        }
    }
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in pixels {
        let (x, y) = (x.clamp(0, w as i64 - 1), y.clamp(0, h as i64 - 1));
        let d = boundary
            .iter()
            .map(|&(bx, by)| (bx - x).pow(2) + (by - y).pow(2))
            .min()
            .map_or(cap, |sq| (sq as f64).sqrt().min(cap));
        max = max.max(d);
        sum += d;
        n += 1;
    }
    if n == 0 {
        (0.0, 0.0)
    } else {
        (max, sum / n as f64)
    }
}

/// One (instance, round) example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub round: u32,
    pub features: RankFeatures,
    /// True IoU of the round's mask, when ground truth is known.
    pub target: Option<f64>,
}

/// Every round with a mask, in instance then round order. `gt` supplies
/// canvas ground truth for targets.
pub fn samples_from_states(
    states: &BTreeMap<String, InstanceState>,
    gt: &BTreeMap<String, Mask>,
) -> Result<Vec<LabeledSample>, RankError> {
    let mut out = Vec::new();
    for (id, st) in states {
        for rec in &st.rounds {
            let Some(mask) = &rec.mask else { continue };
            if matches!(rec.answer, RoundAnswer::Skip) {
                continue;
            }
            let features = extract_features(st, rec.round)?;
            let target = match gt.get(id) {
                Some(g) => Some(iou(&rle_decode(mask)?, g)?),
                None => None,
            };
            out.push(LabeledSample {
                id: id.clone(),
                round: rec.round,
                features,
                target,
            });
        }
    }
    Ok(out)
}

pub fn write_features_csv<W: std::io::Write>(samples: &[LabeledSample], w: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    let mut header = vec!["id", "round"];
    header.extend(FEATURE_NAMES);
    header.push("target_iou");
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.id.clone(), s.round.to_string()];
        row.extend(s.features.to_array().iter().map(|v| format!("{v:.6}")));
        row.push(s.target.map_or(String::new(), |t| format!("{t:.6}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            features_per_split: 2,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<(), RankError> {
        let mut p = Vec::new();
        if self.n_trees == 0 {
            p.push("n_trees must be >= 1");
        }
        if self.min_leaf == 0 {
            p.push("min_leaf must be >= 1");
        }
        if self.features_per_split == 0 || self.features_per_split > NUM_FEATURES {
            p.push("features_per_split must be in 1..=5");
        }
        if p.is_empty() {
            Ok(())
        } else {
            Err(RankError::InvalidParams(p.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        /// `x[feature] <= threshold`
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn predict(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        let mut n = self;
        loop {
            match n {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => n = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<(f64, usize)> {
        match self {
            Node::Leaf { value, samples } => vec![(*value, *samples)],
            Node::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format: String,
    pub version: u32,
    pub params: ForestParams,
    pub trees: Vec<Node>,
}

impl Forest {
    pub fn from_trees(params: ForestParams, trees: Vec<Node>) -> Self {
        Self {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            params,
            trees,
        }
    }

    /// Mean tree output clamped to `[0, 1]`.
    pub fn predict(&self, f: &RankFeatures) -> f64 {
        self.predict_array(&f.to_array())
    }

    pub fn predict_array(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        (s / self.trees.len() as f64).clamp(0.0, 1.0)
    }

    pub fn to_json(&self) -> Result<String, RankError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, RankError> {
        let f: Forest = serde_json::from_str(s)?;
        if f.format != FORMAT_NAME || f.version != FORMAT_VERSION {
            return Err(RankError::Format {
                format: f.format,
                version: f.version,
            });
        }
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), RankError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, RankError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Bagged CART regression trees with variance-reduction splits over a random
/// feature subset per node. Each tree draws from its own random stream, so the
/// result does not depend on `workers`.
pub fn train(x: &[[f64; NUM_FEATURES]], y: &[f64], params: &ForestParams, workers: usize) -> Result<Forest, RankError> {
    params.validate()?;
    if x.len() != y.len() {
        return Err(RankError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(RankError::Empty);
    }
    if x.len() < params.min_leaf {
        return Err(RankError::TooFewSamples {
            need: params.min_leaf,
            got: x.len(),
        });
    }
    if let Some(&t) = y.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(RankError::InvalidTarget(t));
    }
    let ids: Vec<usize> = (0..params.n_trees).collect();
    let trees = for_each_ordered(&ids, workers, |&t| {
        let mut rng = substream(params.seed, "tree", t as u32);
        let n = x.len();
        let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        build_node(x, y, &mut idx, 0, params, &mut rng)
    });
    Ok(Forest::from_trees(*params, trees))
}

fn mean(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

fn build_node(
    x: &[[f64; NUM_FEATURES]],
    y: &[f64],
    idx: &mut [usize],
    depth: usize,
    params: &ForestParams,
    rng: &mut impl Rng,
) -> Node {
    let leaf = |idx: &[usize]| Node::Leaf {
        value: mean(y, idx),
        samples: idx.len(),
    };
    if depth >= params.max_depth || idx.len() < 2 * params.min_leaf {
        return leaf(idx);
    }
    let mut features: Vec<usize> = (0..NUM_FEATURES).collect();
    features.shuffle(rng);
    // try the drawn subset first, then the rest, so a constant feature in the
    // subset does not stop growth
    let mut best: Option<(f64, usize, f64)> = None;
    for (k, &f) in features.iter().enumerate() {
        if k >= params.features_per_split && best.is_some() {
            break;
        }
        if let Some((gain, thr)) = best_split(x, y, idx, f, params.min_leaf) {
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, thr));
            }
        }
    }
    let Some((gain, feature, threshold)) = best else {
        return leaf(idx);
    };
    if gain <= 1e-12 {
        return leaf(idx);
    }
    // partition in place, keeping relative order
    idx.sort_by_key(|&i| x[i][feature] > threshold);
    let split = idx.partition_point(|&i| x[i][feature] <= threshold);
    let (l, r) = idx.split_at_mut(split);
    Node::Split {
        feature,
        threshold,
        left: Box::new(build_node(x, y, l, depth + 1, params, rng)),
        right: Box::new(build_node(x, y, r, depth + 1, params, rng)),
    }
}

/// Best threshold on one feature: `(sse reduction, threshold)`.
fn best_split(x: &[[f64; NUM_FEATURES]], y: &[f64], idx: &[usize], f: usize, min_leaf: usize) -> Option<(f64, f64)> {
    let mut order: Vec<usize> = idx.to_vec();
    order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
    let n = order.len();
    let total: f64 = order.iter().map(|&i| y[i]).sum();
    let total_sq: f64 = order.iter().map(|&i| y[i] * y[i]).sum();
    let parent_sse = total_sq - total * total / n as f64;
    let mut left = 0.0;
    let mut left_sq = 0.0;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..n - 1 {
        let v = y[order[k]];
        left += v;
        left_sq += v * v;
        let nl = k + 1;
        let nr = n - nl;
        if nl < min_leaf || nr < min_leaf {
            continue;
        }
        let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
        if a == b {
            continue;
        }
        let right = total - left;
        let right_sq = total_sq - left_sq;
        let sse = (left_sq - left * left / nl as f64) + (right_sq - right * right / nr as f64);
        let gain = parent_sse - sse;
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, a + (b - a) / 2.0));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Percentage of masks kept, 5 to 100.
    pub percent: u32,
    pub count: usize,
    pub mean_iou: f64,
}

/// Mean true IoU of the top N% masks by prediction, N = 5, 10, ..., 100.
/// Equal predictions keep their input order.
pub fn ranking_curve(pred: &[f64], truth: &[f64]) -> Result<Vec<CurvePoint>, RankError> {
    if pred.len() != truth.len() {
        return Err(RankError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(RankError::Empty);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    let n = pred.len();
    Ok((1..=20)
        .map(|k| {
            let percent = k * 5;
            let count = ((n * percent as usize).div_ceil(100)).max(1);
            let s: f64 = order[..count].iter().map(|&i| truth[i]).sum();
            CurvePoint {
                percent,
                count,
                mean_iou: s / count as f64,
            }
        })
        .collect())
}

/// Ranks with ties sharing their average rank (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, RankError> {
    if a.len() != b.len() {
        return Err(RankError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(RankError::Empty);
    }
    Ok(pearson(&ranks(a), &ranks(b)))
}

pub fn mse(forest: &Forest, x: &[[f64; NUM_FEATURES]], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| (forest.predict_array(xi) - yi).powi(2))
        .sum::<f64>()
        / x.len().max(1) as f64
}

/// Increase in mean squared error when each feature column is shuffled.
pub fn permutation_importance(forest: &Forest, x: &[[f64; NUM_FEATURES]], y: &[f64], seed: u64) -> [f64; NUM_FEATURES] {
    let base = mse(forest, x, y);
    let mut out = [0.0; NUM_FEATURES];
    for (f, o) in out.iter_mut().enumerate() {
        let mut rng = substream(seed, "importance", f as u32);
        let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
        col.shuffle(&mut rng);
        let xp: Vec<[f64; NUM_FEATURES]> = x
            .iter()
            .zip(&col)
            .map(|(r, &v)| {
                let mut r = *r;
                r[f] = v;
                r
            })
            .collect();
        *o = mse(forest, &xp, y) - base;
    }
    out
}

/// Seeded split of `0..n` into `round(fraction * n)` training indices (at
/// least one) and the rest for testing, both sorted.
pub fn train_test_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, "split", 0));
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(n.min(1), n);
    let (mut train, mut test) = (idx[..k].to_vec(), idx[k..].to_vec());
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Held-out quality of a forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub samples: usize,
    pub spearman: f64,
    pub pearson: f64,
    pub mse: f64,
    /// Mean true IoU of the half predicted best.
    pub top_half_iou: f64,
    pub bottom_half_iou: f64,
    pub curve: Vec<CurvePoint>,
    pub importance: [f64; NUM_FEATURES],
}

pub fn evaluate(forest: &Forest, x: &[[f64; NUM_FEATURES]], y: &[f64], seed: u64) -> Result<Evaluation, RankError> {
    if x.len() != y.len() {
        return Err(RankError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(RankError::TooFewSamples { need: 2, got: x.len() });
    }
    let pred: Vec<f64> = x.iter().map(|r| forest.predict_array(r)).collect();
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    let half = order.len() / 2;
    let mean = |ix: &[usize]| ix.iter().map(|&i| y[i]).sum::<f64>() / ix.len() as f64;
    Ok(Evaluation {
        samples: x.len(),
        spearman: spearman(&pred, y)?,
        pearson: pearson(&pred, y),
        mse: mse(forest, x, y),
        top_half_iou: mean(&order[..half]),
        bottom_half_iou: mean(&order[half..]),
        curve: ranking_curve(&pred, y)?,
        importance: permutation_importance(forest, x, y, seed),
    })
}
