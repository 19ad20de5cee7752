//! Simulated annotator: box noise, error regions, click allocation and click
//! placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maskcore::{connected_components, distance_transform, region_center, BBox, Connectivity, Mask, Region};

pub type SimRng = ChaCha8Rng;

/// Independent random stream for `(seed, key, round)`.
pub fn substream(seed: u64, key: &str, round: u32) -> SimRng {
    // FNV-1a over the key, then splitmix64 finalisation with seed and round
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (round as u64).rotate_left(32);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    SimRng::seed_from_u64(z)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("box perturbation rejected {attempts} consecutive candidates (sigma too large for min_iou)")]
    BoxRejection { attempts: usize },
    #[error("invalid annotator parameter: {0}")]
    InvalidParameter(String),
    #[error("click allocation needs at least one error region")]
    NoRegions,
    #[error(transparent)]
    Mask(#[from] crate::maskcore::MaskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Should be foreground.
    Positive,
    /// Should be background.
    Negative,
}

/// A corrective click in canvas coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Click {
    pub x: f64,
    pub y: f64,
    pub polarity: Polarity,
    pub round: u32,
    #[serde(default)]
    pub t_ms: u64,
    /// Area of the error region the click was aimed at, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_area: Option<u64>,
}

impl Click {
    pub fn new(x: f64, y: f64, polarity: Polarity, round: u32) -> Self {
        Self {
            x,
            y,
            polarity,
            round,
            t_ms: 0,
            target_area: None,
        }
    }

    /// Click at the centre of pixel `(x, y)`.
    pub fn at_pixel(x: usize, y: usize, polarity: Polarity, round: u32) -> Self {
        Self::new(x as f64 + 0.5, y as f64 + 0.5, polarity, round)
    }

    /// The pixel containing the click.
    pub fn pixel(&self) -> (i64, i64) {
        (self.x.floor() as i64, self.y.floor() as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    FalsePositive,
    FalseNegative,
}

impl ErrorKind {
    pub fn corrective_polarity(self) -> Polarity {
        match self {
            ErrorKind::FalsePositive => Polarity::Negative,
            ErrorKind::FalseNegative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRegion {
    pub region: Region,
    pub kind: ErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    RegionCentre,
    RegionUniform,
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    ProportionalDeterministic,
    ProportionalSampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorModel {
    pub click_sigma: f64,
    /// Regions with fewer than `min_region_side²` pixels are ignored.
    pub min_region_side: f64,
    pub max_clicks_per_round: usize,
    pub placement: Placement,
    pub allocation: Allocation,
    #[serde(default)]
    pub rng_seed: u64,
}

impl AnnotatorModel {
    /// Simulation defaults: centre clicks, 3 px noise, 3 clicks per round.
    pub fn blueprint() -> Self {
        Self {
            click_sigma: 3.0,
            min_region_side: 0.0,
            max_clicks_per_round: 3,
            placement: Placement::RegionCentre,
            allocation: Allocation::ProportionalDeterministic,
            rng_seed: 0,
        }
    }

    /// Human-campaign mimic: near-uniform clicks, 10 px minimum side, 4 clicks.
    pub fn campaign() -> Self {
        Self {
            click_sigma: 3.0,
            min_region_side: 10.0,
            max_clicks_per_round: 4,
            placement: Placement::RegionUniform,
            allocation: Allocation::ProportionalDeterministic,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut problems = Vec::new();
        if !(self.click_sigma >= 0.0) {
            problems.push("click_sigma must be >= 0");
        }
        if !(self.min_region_side >= 0.0) {
            problems.push("min_region_side must be >= 0");
        }
        if self.max_clicks_per_round < 1 {
            problems.push("max_clicks_per_round must be >= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimError::InvalidParameter(problems.join("; ")))
        }
    }
}

impl Default for AnnotatorModel {
    fn default() -> Self {
        Self::blueprint()
    }
}

/// What an annotator returns for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RoundAnswer {
    Clicks { clicks: Vec<Click> },
    ZeroClicks,
    Skip,
}

impl RoundAnswer {
    pub fn clicks(&self) -> &[Click] {
        match self {
            RoundAnswer::Clicks { clicks } => clicks,
            _ => &[],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RoundAnswer::Clicks { .. } => "clicks",
            RoundAnswer::ZeroClicks => "zero_clicks",
            RoundAnswer::Skip => "skip",
        }
    }
}

const MAX_BOX_ATTEMPTS: usize = 10_000;

/// Gaussian corner noise with rejection until the box IoU reaches `min_iou`.
pub fn perturb_box(gt: &BBox, sigma: f64, min_iou: f64, rng: &mut impl Rng) -> Result<BBox, SimError> {
    perturb_box_counted(gt, sigma, min_iou, rng).map(|(b, _)| b)
}

/// [`perturb_box`] that also reports how many candidates were drawn.
pub fn perturb_box_counted(gt: &BBox, sigma: f64, min_iou: f64, rng: &mut impl Rng) -> Result<(BBox, usize), SimError> {
    if !(min_iou > 0.0 && min_iou <= 1.0) {
        return Err(SimError::InvalidParameter(format!("min_iou {min_iou} not in (0, 1]")));
    }
    if sigma == 0.0 {
        return Ok((*gt, 1));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| SimError::InvalidParameter(format!("sigma {sigma}: {e}")))?;
    for attempt in 1..=MAX_BOX_ATTEMPTS {
        let x0 = gt.x + normal.sample(rng);
        let y0 = gt.y + normal.sample(rng);
        let x1 = gt.right() + normal.sample(rng);
        let y1 = gt.bottom() + normal.sample(rng);
        let cand = BBox::new(x0, y0, x1 - x0, y1 - y0);
        if cand.w < 1.0 || cand.h < 1.0 {
            continue;
        }
        if cand.iou(gt) >= min_iou {
            return Ok((cand, attempt));
        }
    }
    Err(SimError::BoxRejection {
        attempts: MAX_BOX_ATTEMPTS,
    })
}

/// 4-connected false-positive and false-negative components with at least
/// `min_side²` pixels, by decreasing area.
pub fn extract_error_regions(pred: &Mask, gt: &Mask, min_side: f64) -> Result<Vec<ErrorRegion>, SimError> {
    let fp = pred.and_not(gt)?;
    let fn_ = gt.and_not(pred)?;
    let min_area = min_side * min_side;
    let mut out: Vec<ErrorRegion> = connected_components(&fp, Connectivity::Four)
        .into_iter()
        .map(|region| ErrorRegion {
            region,
            kind: ErrorKind::FalsePositive,
        })
        .chain(
            connected_components(&fn_, Connectivity::Four)
                .into_iter()
                .map(|region| ErrorRegion {
                    region,
                    kind: ErrorKind::FalseNegative,
                }),
        )
        .filter(|r| r.region.area as f64 >= min_area)
        .collect();
    out.sort_by(|a, b| {
        b.region.area.cmp(&a.region.area).then_with(|| {
            let (ax, ay) = a.region.first_pixel();
            let (bx, by) = b.region.first_pixel();
            (ay, ax).cmp(&(by, bx))
        })
    });
    for (i, r) in out.iter_mut().enumerate() {
        r.region.id = i;
    }
    Ok(out)
}

/// Splits `budget` clicks over regions in proportion to their areas.
pub fn allocate_clicks(
    regions: &[ErrorRegion],
    budget: usize,
    mode: Allocation,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, SimError> {
    if regions.is_empty() {
        return Err(SimError::NoRegions);
    }
    let areas: Vec<f64> = regions.iter().map(|r| r.region.area as f64).collect();
    let mut counts = vec![0usize; regions.len()];
    match mode {
        Allocation::ProportionalDeterministic => {
            let total: f64 = areas.iter().sum();
            let quotas: Vec<f64> = areas.iter().map(|a| budget as f64 * a / total).collect();
            for (c, q) in counts.iter_mut().zip(&quotas) {
                *c = q.floor() as usize;
            }
            let left = budget - counts.iter().sum::<usize>();
            let mut order: Vec<usize> = (0..regions.len()).collect();
            // largest remainder first; stable sort keeps region order on ties
            order.sort_by(|&a, &b| {
                let ra = quotas[a] - quotas[a].floor();
                let rb = quotas[b] - quotas[b].floor();
                rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal)
            });
            for &i in order.iter().cycle().take(left) {
                counts[i] += 1;
            }
            let largest = (0..regions.len())
                .max_by(|&a, &b| areas[a].partial_cmp(&areas[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            if budget > 0 && counts[largest] == 0 {
                let donor = (0..regions.len()).rev().find(|&i| counts[i] > 0).unwrap();
                counts[donor] -= 1;
                counts[largest] += 1;
            }
        }
        Allocation::ProportionalSampled => {
            let dist =
                WeightedIndex::new(&areas).map_err(|e| SimError::InvalidParameter(format!("region areas: {e}")))?;
            for _ in 0..budget {
                counts[dist.sample(rng)] += 1;
            }
        }
    }
    Ok(counts)
}

/// Local padded grid around a region used for distance computations.
struct LocalGrid {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl LocalGrid {
    fn around(region: &Region) -> Self {
        Self {
            x0: region.bbox.x as usize,
            y0: region.bbox.y as usize,
            w: region.bbox.w as usize + 2,
            h: region.bbox.h as usize + 2,
        }
    }

    fn local(&self, x: usize, y: usize) -> (usize, usize) {
        (x - self.x0 + 1, y - self.y0 + 1)
    }

    fn mask(&self, region: &Region) -> Mask {
        let mut m = Mask::new(self.w, self.h);
        for &(x, y) in &region.pixels {
            let (lx, ly) = self.local(x, y);
            m.set(lx, ly, true);
        }
        m
    }
}

/// Farthest-point positions: the pole of inaccessibility first, then pixels
/// maximising the smaller of the distance to the complement and to earlier picks.
fn farthest_points(region: &Region, n: usize) -> Vec<(usize, usize)> {
    let grid = LocalGrid::around(region);
    let inside = grid.mask(region);
    let field = distance_transform(&inside.not()).expect("padding is outside");
    let complement: Vec<f64> = region
        .pixels
        .iter()
        .map(|&(x, y)| {
            let (lx, ly) = grid.local(x, y);
            field.sq(lx, ly)
        })
        .collect();
    let mut to_picks = vec![f64::INFINITY; region.pixels.len()];
    let mut picks = Vec::with_capacity(n);
    picks.push(region_center(region));
    while picks.len() < n {
        let (px, py) = *picks.last().unwrap();
        for (d, &(x, y)) in to_picks.iter_mut().zip(&region.pixels) {
            let dx = x as f64 - px as f64;
            let dy = y as f64 - py as f64;
            *d = d.min(dx * dx + dy * dy);
        }
        // score = min(complement, picks); ties prefer pixels farther from earlier picks
        let key = |i: usize| (complement[i].min(to_picks[i]), to_picks[i]);
        let mut best = 0;
        for i in 1..region.pixels.len() {
            if key(i) > key(best) {
                best = i;
            }
        }
        picks.push(region.pixels[best]);
    }
    picks
}

/// Outer contour of a region by Moore-neighbour tracing, clockwise from the
/// first row-major pixel.
pub fn trace_contour(region: &Region) -> Vec<(usize, usize)> {
    const DIRS: [(i64, i64); 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];
    let grid = LocalGrid::around(region);
    let inside = grid.mask(region);
    let start = {
        let (x, y) = region.first_pixel();
        let (lx, ly) = grid.local(x, y);
        (lx as i64, ly as i64)
    };
    let start_back = (start.0 - 1, start.1);
    let mut contour = vec![start];
    let (mut cur, mut back) = (start, start_back);
    let limit = 4 * region.area + 8;
    for _ in 0..limit {
        let d = (back.0 - cur.0, back.1 - cur.1);
        let i = DIRS.iter().position(|&v| v == d).expect("backtrack is a neighbour");
        let mut next = None;
        for k in 1..=8 {
            let (dx, dy) = DIRS[(i + k) % 8];
            let p = (cur.0 + dx, cur.1 + dy);
            if inside.get_signed(p.0, p.1) {
                let (bx, by) = DIRS[(i + k - 1) % 8];
                next = Some((p, (cur.0 + bx, cur.1 + by)));
                break;
            }
        }
        let Some((p, b)) = next else { break };
        if p == start && b == start_back {
            break;
        }
        cur = p;
        back = b;
        if cur == start {
            // entered the start from another side; keep tracing
            continue;
        }
        contour.push(cur);
    }
    contour
        .into_iter()
        .map(|(lx, ly)| (lx as usize + grid.x0 - 1, ly as usize + grid.y0 - 1))
        .collect()
}

/// `n` contour pixels at equal arc-length spacing, starting from the contour
/// pixel nearest the region centre.
fn boundary_points(region: &Region, n: usize) -> Vec<(usize, usize)> {
    let contour = trace_contour(region);
    if contour.len() == 1 {
        return vec![contour[0]; n];
    }
    let (cx, cy) = region_center(region);
    let d2 = |&(x, y): &(usize, usize)| {
        let dx = x as f64 - cx as f64;
        let dy = y as f64 - cy as f64;
        dx * dx + dy * dy
    };
    let mut start = 0;
    for (i, p) in contour.iter().enumerate() {
        if d2(p) < d2(&contour[start]) {
            start = i;
        }
    }
    let m = contour.len();
    let ring: Vec<(usize, usize)> = (0..m).map(|k| contour[(start + k) % m]).collect();
    let step = |a: (usize, usize), b: (usize, usize)| {
        let dx = a.0 as f64 - b.0 as f64;
        let dy = a.1 as f64 - b.1 as f64;
        (dx * dx + dy * dy).sqrt()
    };
    let mut cum = Vec::with_capacity(m);
    let mut acc = 0.0;
    cum.push(0.0);
    for k in 1..m {
        acc += step(ring[k - 1], ring[k]);
        cum.push(acc);
    }
    let total = acc + step(ring[m - 1], ring[0]);
    (0..n)
        .map(|k| {
            let target = total * k as f64 / n as f64;
            let mut best = 0;
            for (i, &c) in cum.iter().enumerate() {
                if (c - target).abs() < (cum[best] - target).abs() {
                    best = i;
                }
            }
            ring[best]
        })
        .collect()
}

/// Positions `n` clicks on one error region and applies isotropic Gaussian noise.
/// Noisy clicks are only clamped to the canvas, never back into the region.
pub fn place_clicks(
    region: &ErrorRegion,
    n: usize,
    placement: Placement,
    sigma: f64,
    round: u32,
    canvas: (usize, usize),
    rng: &mut impl Rng,
) -> Vec<Click> {
    if n == 0 {
        return Vec::new();
    }
    let r = &region.region;
    let pixels = match placement {
        Placement::RegionCentre => farthest_points(r, n),
        Placement::RegionUniform => (0..n).map(|_| r.pixels[rng.random_range(0..r.pixels.len())]).collect(),
        Placement::Boundary => boundary_points(r, n),
    };
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma >= 0"));
    let max_x = canvas.0 as f64 - 1e-6;
    let max_y = canvas.1 as f64 - 1e-6;
    pixels
        .into_iter()
        .map(|(x, y)| {
            let (mut cx, mut cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if let Some(noise) = &noise {
                cx += noise.sample(rng);
                cy += noise.sample(rng);
            }
            let mut c = Click::new(
                cx.clamp(0.0, max_x),
                cy.clamp(0.0, max_y),
                region.kind.corrective_polarity(),
                round,
            );
            c.target_area = Some(r.area as u64);
            c
        })
        .collect()
}

/// One simulated round: zero-clicks when no error region survives the size
/// filter, otherwise up to `max_clicks_per_round` clicks. Never skips.
pub fn simulate_round(
    pred: &Mask,
    gt: &Mask,
    model: &AnnotatorModel,
    round: u32,
    rng: &mut impl Rng,
) -> Result<RoundAnswer, SimError> {
    model.validate()?;
    let regions = extract_error_regions(pred, gt, model.min_region_side)?;
    if regions.is_empty() {
        return Ok(RoundAnswer::ZeroClicks);
    }
    let counts = allocate_clicks(&regions, model.max_clicks_per_round, model.allocation, rng)?;
    let mut clicks = Vec::new();
    for (region, &n) in regions.iter().zip(&counts) {
        clicks.extend(place_clicks(
            region,
            n,
            model.placement,
            model.click_sigma,
            round,
            pred.dims(),
            rng,
        ));
    }
    Ok(RoundAnswer::Clicks { clicks })
}
