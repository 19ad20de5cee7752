//! Mask refiners: a ground-truth healing oracle, a colour-model box refiner,
//! a geodesic click refiner, and the wire format for remote refiners.

use std::collections::VecDeque;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annsim::{Click, Polarity};
use crate::cropgeom::{build_input_stack, ChannelLayout, ClickEncoding, CropTransform};
use crate::maskcore::components::label_map;
use crate::maskcore::{connected_components, BBox, Connectivity, Mask, RleMask};
use crate::rgb::RgbImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("invalid refine request: {0}")]
    InvalidRequest(String),
    #[error("no foreground or background seeds")]
    NoSeeds,
    #[error("healing oracle needs a ground-truth mask")]
    MissingGroundTruth,
    #[error("remote refiner transport failure: {0}")]
    Transport(String),
    #[error("remote refiner timed out")]
    Timeout,
    #[error("remote refiner reply malformed: {0}")]
    MalformedReply(String),
    #[error("refiner unavailable: {0}")]
    Unavailable(String),
}

/// Everything a refiner may look at for one instance and round. All masks and
/// clicks are in canvas space.
#[derive(Debug, Clone, Copy)]
pub struct RefineRequest<'a> {
    pub instance_id: &'a str,
    pub crop: &'a RgbImage,
    pub transform: &'a CropTransform,
    /// The (perturbed) box in image space.
    pub image_box: &'a BBox,
    pub box_mask: &'a Mask,
    /// All clicks accumulated so far.
    pub clicks: &'a [Click],
    pub prev_mask: &'a Mask,
    pub round: u32,
}

impl RefineRequest<'_> {
    pub fn validate(&self) -> Result<(), RefineError> {
        let n = self.transform.outer;
        let dims_ok = self.crop.width() == n
            && self.crop.height() == n
            && self.box_mask.dims() == (n, n)
            && self.prev_mask.dims() == (n, n);
        if !dims_ok {
            return Err(RefineError::InvalidRequest(format!(
                "inputs must all be {n}x{n} canvas planes"
            )));
        }
        if let Some(c) = self.clicks.iter().find(|c| c.round > self.round) {
            return Err(RefineError::InvalidRequest(format!(
                "click from round {} in a round-{} request",
                c.round, self.round
            )));
        }
        Ok(())
    }

    pub fn new_clicks(&self) -> impl Iterator<Item = &Click> {
        self.clicks.iter().filter(move |c| c.round == self.round)
    }
}

pub trait Refiner: Send + Sync {
    fn name(&self) -> &'static str;

    /// Binary canvas mask for the request; zero clicks is the box-only role.
    fn refine(&self, req: &RefineRequest<'_>) -> Result<Mask, RefineError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoxPriorParams {
    pub iterations: usize,
    /// Laplace smoothing added to every histogram bin.
    pub alpha: f64,
}

impl Default for BoxPriorParams {
    fn default() -> Self {
        Self {
            iterations: 4,
            alpha: 1.0,
        }
    }
}

/// Smallest accepted geodesic edge weight; it also sets the bucket width of
/// the shortest-path queue.
pub const MIN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeodesicParams {
    /// Base edge weight added to the colour difference; at least
    /// [`MIN_EPSILON`].
    pub epsilon: f64,
    /// The previous mask eroded by this radius seeds the foreground.
    pub core_erosion: f64,
    /// Pixels around the box (and clicks) included in the shortest-path domain.
    pub margin: usize,
    /// A click claims the colour-homogeneous area around it: 4-neighbour steps
    /// with colour difference below this threshold, up to `claim_radius`.
    pub claim_threshold: f64,
    pub claim_radius: f64,
    /// Starting distance of prior (mask core and box band) seeds; clicks start
    /// at 0, so they win ties near themselves.
    pub prior_offset: f64,
}

impl Default for GeodesicParams {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            core_erosion: 5.0,
            margin: 24,
            claim_threshold: 0.1,
            claim_radius: 30.0,
            prior_offset: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefinerKind {
    HealingOracle,
    BoxPrior {
        #[serde(default, flatten)]
        params: BoxPriorParams,
    },
    GeodesicClick {
        #[serde(default, flatten)]
        params: GeodesicParams,
    },
    Remote {
        endpoint: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

fn default_in_flight() -> usize {
    4
}

impl RefinerKind {
    pub fn geodesic() -> Self {
        RefinerKind::GeodesicClick {
            params: GeodesicParams::default(),
        }
    }

    /// Builds a local refiner. The healing oracle needs the instance's canvas
    /// ground truth; remote refiners are built by the service layer.
    pub fn instantiate(&self, gt: Option<&Mask>) -> Result<Box<dyn Refiner>, RefineError> {
        match self {
            RefinerKind::HealingOracle => gt
                .map(|g| Box::new(HealingOracle::new(g.clone())) as Box<dyn Refiner>)
                .ok_or(RefineError::MissingGroundTruth),
            RefinerKind::BoxPrior { params } => Ok(Box::new(BoxPriorRefiner { params: *params })),
            RefinerKind::GeodesicClick { params } => Ok(Box::new(GeodesicRefiner { params: *params })),
            RefinerKind::Remote { endpoint, .. } => Err(RefineError::Unavailable(format!(
                "remote refiner {endpoint} must be built by the service layer"
            ))),
        }
    }
}

/// Testing refiner that heals whole error components hit by new clicks.
#[derive(Debug, Clone)]
pub struct HealingOracle {
    gt: Mask,
}

impl HealingOracle {
    pub fn new(gt: Mask) -> Self {
        Self { gt }
    }
}

impl Refiner for HealingOracle {
    fn name(&self) -> &'static str {
        "healing_oracle"
    }

    fn refine(&self, req: &RefineRequest<'_>) -> Result<Mask, RefineError> {
        req.validate()?;
        let clicks: Vec<Click> = req.new_clicks().copied().collect();
        healing_oracle_refine(&self.gt, req.prev_mask, &clicks)
    }
}

/// Sets every error component of `prev ⊕ gt` containing a click pixel to the
/// ground-truth values. Clicks on correct pixels change nothing.
pub fn healing_oracle_refine(gt: &Mask, prev: &Mask, clicks: &[Click]) -> Result<Mask, RefineError> {
    let diff = prev.xor(gt).map_err(|e| RefineError::InvalidRequest(e.to_string()))?;
    let regions = connected_components(&diff, Connectivity::Four);
    let (w, h) = prev.dims();
    let labels = label_map(&regions, w, h);
    let mut out = prev.clone();
    let mut healed = vec![false; regions.len()];
    for c in clicks {
        let (x, y) = c.pixel();
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            continue;
        }
        if let Some(i) = labels[y as usize * w + x as usize] {
            if !healed[i] {
                healed[i] = true;
                for &(px, py) in &regions[i].pixels {
                    out.set(px, py, gt.get(px, py));
                }
            }
        }
    }
    Ok(out)
}

/// Box-only refiner: iterated colour histograms and likelihood-ratio labelling.
#[derive(Debug, Clone, Default)]
pub struct BoxPriorRefiner {
    pub params: BoxPriorParams,
}

impl Refiner for BoxPriorRefiner {
    fn name(&self) -> &'static str {
        "box_prior"
    }

    fn refine(&self, req: &RefineRequest<'_>) -> Result<Mask, RefineError> {
        req.validate()?;
        box_prior_refine(req.crop, req.box_mask, &self.params)
    }
}

const BINS: usize = 8;

#[inline]
fn color_bin(p: [f32; 3]) -> usize {
    let b = |c: f32| ((c.clamp(0.0, 1.0) * BINS as f32) as usize).min(BINS - 1);
    (b(p[0]) * BINS + b(p[1])) * BINS + b(p[2])
}

struct Histogram {
    counts: Vec<f64>,
    total: f64,
}

impl Histogram {
    fn new() -> Self {
        Self {
            counts: vec![0.0; BINS * BINS * BINS],
            total: 0.0,
        }
    }

    fn add(&mut self, bin: usize) {
        self.counts[bin] += 1.0;
        self.total += 1.0;
    }

    fn log_prob(&self, bin: usize, alpha: f64) -> f64 {
        ((self.counts[bin] + alpha) / (self.total + alpha * self.counts.len() as f64)).ln()
    }
}

/// Pixel bounds `(x0, y0, x1, y1)` (inclusive) of the set pixels.
/// Colour-model segmentation inside the box: foreground seeded by the central
/// quarter-area of the box, background by everything outside it.
pub fn box_prior_refine(crop: &RgbImage, box_mask: &Mask, params: &BoxPriorParams) -> Result<Mask, RefineError> {
    let (w, h) = box_mask.dims();
    if crop.width() != w || crop.height() != h {
        return Err(RefineError::InvalidRequest("crop and box dims differ".into()));
    }
    let (x0, y0, x1, y1) = box_mask
        .pixel_bounds()
        .ok_or_else(|| RefineError::InvalidRequest("box is empty on the canvas".into()))?;
    let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
    let seed = Mask::from_fn(w, h, |x, y| {
        let sx0 = x0 + bw / 4;
        let sy0 = y0 + bh / 4;
        x >= sx0 && x < sx0 + bw.div_ceil(2) && y >= sy0 && y < sy0 + bh.div_ceil(2)
    });
    let bins: Vec<usize> = crop.pixels().iter().map(|&p| color_bin(p)).collect();

    let mut outside = Histogram::new();
    for (i, &b) in bins.iter().enumerate() {
        if !box_mask.bits()[i] {
            outside.add(b);
        }
    }
    let mut labels = seed.clone();
    for _ in 0..params.iterations.max(1) {
        let mut fg = Histogram::new();
        let mut bg = Histogram {
            counts: outside.counts.clone(),
            total: outside.total,
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = y * w + x;
                if labels.bits()[i] {
                    fg.add(bins[i]);
                } else if box_mask.bits()[i] && !seed.bits()[i] {
                    bg.add(bins[i]);
                }
            }
        }
        if fg.total == 0.0 {
            break;
        }
        let mut next = Mask::new(w, h);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = y * w + x;
                if box_mask.bits()[i] && fg.log_prob(bins[i], params.alpha) > bg.log_prob(bins[i], params.alpha) {
                    next.set(x, y, true);
                }
            }
        }
        labels = next;
    }

    // 3x3 majority vote, border counts as background
    let smoothed = Mask::from_fn(w, h, |x, y| {
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return false;
        }
        let mut votes = 0;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                votes += labels.get_signed(x as i64 + dx, y as i64 + dy) as u32;
            }
        }
        votes >= 5
    });

    let regions = connected_components(&smoothed, Connectivity::Four);
    let (cx, cy) = ((x0 + x1) / 2, (y0 + y1) / 2);
    let keep = regions
        .iter()
        .find(|r| r.contains(cx, cy))
        .or_else(|| regions.iter().find(|r| r.pixels.iter().any(|&(x, y)| seed.get(x, y))));
    Ok(match keep {
        Some(r) => r.to_mask(w, h),
        None => seed,
    })
}

/// Click refiner: geodesic nearest-seed labelling on the 4-neighbour grid.
#[derive(Debug, Clone, Default)]
pub struct GeodesicRefiner {
    pub params: GeodesicParams,
}

impl Refiner for GeodesicRefiner {
    fn name(&self) -> &'static str {
        "geodesic_click"
    }

    fn refine(&self, req: &RefineRequest<'_>) -> Result<Mask, RefineError> {
        req.validate()?;
        geodesic_click_refine(req.crop, req.box_mask, req.clicks, req.prev_mask, &self.params)
    }
}

fn click_pixel(c: &Click, w: usize, h: usize) -> Option<(usize, usize)> {
    let (x, y) = c.pixel();
    (x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h).then_some((x as usize, y as usize))
}

/// Pixels reachable from `start` through small colour steps within `radius`.
fn claimed_area(crop: &RgbImage, start: (usize, usize), params: &GeodesicParams, out: &mut [bool]) {
    let (w, h) = (crop.width(), crop.height());
    let r2 = params.claim_radius * params.claim_radius;
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([start]);
    seen[start.1 * w + start.0] = true;
    while let Some((x, y)) = queue.pop_front() {
        out[y * w + x] = true;
        let here = crop.get(x, y);
        for (dx, dy) in [(0i64, -1i64), (-1, 0), (1, 0), (0, 1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            let j = ny * w + nx;
            let ddx = nx as f64 - start.0 as f64;
            let ddy = ny as f64 - start.1 as f64;
            if seen[j] || ddx * ddx + ddy * ddy > r2 {
                continue;
            }
            if RgbImage::color_distance(here, crop.get(nx, ny)) < params.claim_threshold {
                seen[j] = true;
                queue.push_back((nx, ny));
            }
        }
    }
}

/// Foreground seeds: positive clicks and the eroded previous mask. Background
/// seeds: negative clicks and the band outside the box. Prior seeds inside the
/// colour-homogeneous area claimed by an opposite click are dropped. Each pixel
/// takes the label of the geodesically nearest seed; click pixels are fixed.
pub fn geodesic_click_refine(
    crop: &RgbImage,
    box_mask: &Mask,
    clicks: &[Click],
    prev: &Mask,
    params: &GeodesicParams,
) -> Result<Mask, RefineError> {
    let (w, h) = prev.dims();
    if crop.width() != w || crop.height() != h || box_mask.dims() != (w, h) {
        return Err(RefineError::InvalidRequest("crop, box and mask dims differ".into()));
    }
    let click_px: Vec<((usize, usize), Polarity)> = clicks
        .iter()
        .filter_map(|c| click_pixel(c, w, h).map(|p| (p, c.polarity)))
        .collect();
    if click_px.is_empty() && prev.is_blank() {
        return Err(RefineError::NoSeeds);
    }
    if !params.epsilon.is_finite() || params.epsilon < MIN_EPSILON {
        return Err(RefineError::InvalidRequest(format!(
            "epsilon must be at least {MIN_EPSILON}"
        )));
    }

    // domain: box (or previous mask) plus clicks, grown by the margin
    let mut bounds = box_mask.pixel_bounds().or_else(|| prev.pixel_bounds());
    for &((x, y), _) in &click_px {
        bounds = Some(match bounds {
            None => (x, y, x, y),
            Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
        });
    }
    let (bx0, by0, bx1, by1) = bounds.ok_or(RefineError::NoSeeds)?;
    let m = params.margin;
    let (dx0, dy0) = (bx0.saturating_sub(m), by0.saturating_sub(m));
    let (dx1, dy1) = ((bx1 + m).min(w - 1), (by1 + m).min(h - 1));
    // everything below works on the domain window
    let (ww, wh) = (dx1 - dx0 + 1, dy1 - dy0 + 1);
    let widx = |x: usize, y: usize| (y - dy0) * ww + (x - dx0);

    let mut claimed_pos = vec![false; w * h];
    let mut claimed_neg = vec![false; w * h];
    for &(p, pol) in &click_px {
        match pol {
            Polarity::Positive => claimed_area(crop, p, params, &mut claimed_pos),
            Polarity::Negative => claimed_area(crop, p, params, &mut claimed_neg),
        }
    }

    const UNSET: u8 = 0;
    const FG: u8 = 1;
    const BG: u8 = 2;
    let core = prev.erode(params.core_erosion);
    let mut dist = vec![f64::INFINITY; ww * wh];
    let mut label = vec![UNSET; ww * wh];
    let mut color = Vec::with_capacity(ww * wh);
    let off = params.prior_offset;
    for y in dy0..=dy1 {
        for x in dx0..=dx1 {
            let i = y * w + x;
            let k = widx(x, y);
            color.push(crop.pixels()[i]);
            if core.bits()[i] && !claimed_neg[i] {
                (label[k], dist[k]) = (FG, off);
            } else if !box_mask.bits()[i] && !claimed_pos[i] {
                (label[k], dist[k]) = (BG, off);
            }
        }
    }
    // clicks override prior seeds; later clicks win
    for &((x, y), pol) in &click_px {
        let k = widx(x, y);
        label[k] = if pol == Polarity::Positive { FG } else { BG };
        dist[k] = 0.0;
    }
    if !label.iter().any(|&l| l != UNSET) {
        return Err(RefineError::NoSeeds);
    }
    // Every edge costs at least epsilon, so with buckets of that width all
    // entries of the lowest bucket are final and can go in any order.
    let width = params.epsilon;
    let bucket_of = |d: f64| (d / width) as usize;
    let mut buckets: Vec<Vec<u32>> = Vec::new();
    let push = |buckets: &mut Vec<Vec<u32>>, d: f64, k: usize| {
        let b = bucket_of(d);
        if b >= buckets.len() {
            buckets.resize_with(b + 1, Vec::new);
        }
        buckets[b].push(k as u32);
    };
    // only seeds bordering something they could improve need expanding
    for y in 0..wh {
        for x in 0..ww {
            let k = y * ww + x;
            if label[k] == UNSET {
                continue;
            }
            let interior = (x > 0 && dist[k - 1] <= dist[k])
                && (x + 1 < ww && dist[k + 1] <= dist[k])
                && (y > 0 && dist[k - ww] <= dist[k])
                && (y + 1 < wh && dist[k + ww] <= dist[k]);
            if !interior {
                push(&mut buckets, dist[k], k);
            }
        }
    }

    let mut b = 0;
    while b < buckets.len() {
        while let Some(k) = buckets[b].pop() {
            let k = k as usize;
            let d = dist[k];
            if bucket_of(d) != b {
                continue;
            }
            let (x, y) = (k % ww, k / ww);
            let here = color[k];
            let neighbours = [
                (y > 0).then(|| k - ww),
                (x > 0).then(|| k - 1),
                (x + 1 < ww).then(|| k + 1),
                (y + 1 < wh).then(|| k + ww),
            ];
            for j in neighbours.into_iter().flatten() {
                let nd = d + RgbImage::color_distance(here, color[j]) + params.epsilon;
                if nd < dist[j] {
                    dist[j] = nd;
                    label[j] = label[k];
                    push(&mut buckets, nd, j);
                }
            }
        }
        b += 1;
    }

    let mut out = Mask::new(w, h);
    for y in dy0..=dy1 {
        for x in dx0..=dx1 {
            if label[widx(x, y)] == FG {
                out.set(x, y, true);
            }
        }
    }
    for &((x, y), pol) in &click_px {
        out.set(x, y, pol == Polarity::Positive);
    }
    Ok(out)
}

/// Click as sent over the remote refiner protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireClick {
    pub x: f64,
    pub y: f64,
    pub polarity: Polarity,
    pub round: u32,
}

/// `POST /refine` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRefineRequest {
    pub instance_id: String,
    /// Base64 of the binary input stack (see `InputStack::to_bytes`).
    pub stack_b64: String,
    pub clicks: Vec<WireClick>,
    pub round: u32,
}

/// `POST /refine` reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRefineReply {
    pub mask: RleMask,
}

impl RemoteRefineRequest {
    /// Packs a request with the given click encoding (dual binary disks by default).
    pub fn from_request(req: &RefineRequest<'_>, enc: Option<&ClickEncoding>) -> Result<Self, RefineError> {
        let default_enc = ClickEncoding::disk(5.0, ChannelLayout::Dual);
        let enc = enc.unwrap_or(&default_enc);
        let stack = build_input_stack(req.crop, req.image_box, req.transform, req.clicks, Some(enc))
            .map_err(|e| RefineError::InvalidRequest(e.to_string()))?;
        Ok(Self {
            instance_id: req.instance_id.to_string(),
            stack_b64: base64::engine::general_purpose::STANDARD.encode(stack.to_bytes()),
            clicks: req
                .clicks
                .iter()
                .map(|c| WireClick {
                    x: c.x,
                    y: c.y,
                    polarity: c.polarity,
                    round: c.round,
                })
                .collect(),
            round: req.round,
        })
    }

    pub fn decode_stack(&self) -> Result<crate::cropgeom::InputStack, RefineError> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&self.stack_b64)
            .map_err(|e| RefineError::InvalidRequest(e.to_string()))?;
        crate::cropgeom::InputStack::from_bytes(&bytes).map_err(|e| RefineError::InvalidRequest(e.to_string()))
    }
}

impl RemoteRefineReply {
    /// Decodes the reply mask and checks it matches the canvas size.
    pub fn into_mask(self, outer: usize) -> Result<Mask, RefineError> {
        let m = crate::maskcore::rle_decode(&self.mask).map_err(|e| RefineError::MalformedReply(e.to_string()))?;
        if m.dims() != (outer, outer) {
            return Err(RefineError::MalformedReply(format!(
                "mask is {}x{}, expected {outer}x{outer}",
                m.width(),
                m.height()
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cropgeom::make_transform;
    use crate::maskcore::iou;

    fn two_color(w: usize, h: usize, fg: impl Fn(usize, usize) -> bool) -> (RgbImage, Mask) {
        let gt = Mask::from_fn(w, h, &fg);
        let img = RgbImage::from_fn(w, h, |x, y| if fg(x, y) { [0.85, 0.2, 0.2] } else { [0.15, 0.45, 0.8] });
        (img, gt)
    }

    #[test]
    fn healing_removes_fp_component() {
        let gt = Mask::from_fn(20, 20, |x, y| x < 10 && y < 10);
        let prev = Mask::from_fn(20, 20, |x, y| {
            x < 10 && y < 10 || (15..18).contains(&x) && (15..18).contains(&y)
        });
        let out = healing_oracle_refine(&gt, &prev, &[Click::at_pixel(16, 16, Polarity::Negative, 1)]).unwrap();
        assert_eq!(out, gt);
        // correct pixel: nothing happens
        let same = healing_oracle_refine(&gt, &prev, &[Click::at_pixel(2, 2, Polarity::Negative, 1)]).unwrap();
        assert_eq!(same, prev);
        // idempotent for repeated clicks
        let c = Click::at_pixel(16, 16, Polarity::Negative, 1);
        assert_eq!(healing_oracle_refine(&gt, &prev, &[c, c]).unwrap(), out);
    }

    #[test]
    fn box_prior_two_color_scene() {
        let (img, gt) = two_color(100, 100, |x, y| {
            let dx = x as f64 - 50.0;
            let dy = y as f64 - 50.0;
            dx * dx / 900.0 + dy * dy / 500.0 <= 1.0
        });
        let b = gt.bbox().unwrap();
        let t = make_transform(&b, (100, 100), 60, 99).unwrap();
        let _ = t;
        let box_mask = Mask::from_fn(100, 100, |x, y| b.contains_point(x as f64 + 0.5, y as f64 + 0.5));
        let out = box_prior_refine(&img, &box_mask, &BoxPriorParams::default()).unwrap();
        assert!(iou(&out, &gt).unwrap() >= 0.9);
    }

    #[test]
    fn box_prior_degenerate_scene_is_non_empty() {
        let img = RgbImage::from_fn(60, 60, |_, _| [0.5, 0.5, 0.5]);
        let box_mask = Mask::from_fn(60, 60, |x, y| (20..40).contains(&x) && (20..40).contains(&y));
        let out = box_prior_refine(&img, &box_mask, &BoxPriorParams::default()).unwrap();
        assert!(!out.is_blank());
        assert!(out.get(30, 30));
        assert!(out.iter_set().all(|(x, y)| box_mask.get(x, y)));
    }

    #[test]
    fn geodesic_positive_click_adds_missed_region() {
        // two red squares; previous mask only covers the left one
        let (img, gt) = two_color(80, 40, |x, y| {
            (8..30).contains(&y) && ((5..30).contains(&x) || (45..70).contains(&x))
        });
        let prev = Mask::from_fn(80, 40, |x, y| (8..30).contains(&y) && (5..30).contains(&x));
        let box_mask = Mask::from_fn(80, 40, |x, y| (2..74).contains(&x) && (4..34).contains(&y));
        let clicks = [Click::at_pixel(57, 19, Polarity::Positive, 1)];
        let before = iou(&prev, &gt).unwrap();
        let out = geodesic_click_refine(&img, &box_mask, &clicks, &prev, &GeodesicParams::default()).unwrap();
        assert!(out.get(57, 19) && out.get(46, 9));
        assert!(iou(&out, &gt).unwrap() > before + 0.3);
    }

    #[test]
    fn geodesic_negative_click_removes_fp() {
        let (img, gt) = two_color(60, 60, |x, y| (10..30).contains(&x) && (10..50).contains(&y));
        // previous mask spills over a background slab on the right
        let prev = Mask::from_fn(60, 60, |x, y| (10..50).contains(&x) && (10..50).contains(&y));
        let box_mask = Mask::from_fn(60, 60, |x, y| (5..55).contains(&x) && (5..55).contains(&y));
        let clicks = [Click::at_pixel(40, 30, Polarity::Negative, 1)];
        let out = geodesic_click_refine(&img, &box_mask, &clicks, &prev, &GeodesicParams::default()).unwrap();
        assert!(!out.get(40, 30));
        assert!(iou(&out, &gt).unwrap() > 0.9);
    }

    #[test]
    fn geodesic_needs_seeds() {
        let img = RgbImage::new(10, 10);
        let err = geodesic_click_refine(
            &img,
            &Mask::new(10, 10),
            &[],
            &Mask::new(10, 10),
            &GeodesicParams::default(),
        );
        assert_eq!(err, Err(RefineError::NoSeeds));
    }

    #[test]
    fn healing_oracle_requires_gt() {
        assert_eq!(
            RefinerKind::HealingOracle.instantiate(None).err(),
            Some(RefineError::MissingGroundTruth)
        );
    }

    #[test]
    fn refiner_kind_json() {
        let k: RefinerKind = serde_json::from_str(r#"{"kind":"geodesic_click","epsilon":0.02}"#).unwrap();
        match k {
            RefinerKind::GeodesicClick { params } => {
                assert_eq!(params.epsilon, 0.02);
                assert_eq!(params.core_erosion, 5.0);
            }
            _ => panic!(),
        }
        let r: RefinerKind = serde_json::from_str(r#"{"kind":"remote","endpoint":"http://x/refine"}"#).unwrap();
        assert!(matches!(r, RefinerKind::Remote { timeout_ms: 30_000, .. }));
    }
}
