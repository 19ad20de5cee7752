//! Browser demo over the clickseg core.
//!
//! A [`Session`] holds one synthetic scene, its current mask and the clicks
//! so far. The page can add clicks by hand, let the simulated annotator play
//! a round, and view how the clicks are encoded as network input planes.
//! Everything returns RGBA buffers ready for `ImageData`.

use clickseg::annsim::{simulate_round, substream, AnnotatorModel, Click, Placement, Polarity};
use clickseg::cropgeom::{rasterize_clicks, ChannelLayout, ClickEncoding, EncodingKind};
use clickseg::maskcore::{boundary_f, boundary_pixels, iou, BBox, Mask};
use clickseg::refine::{box_prior_refine, geodesic_click_refine, BoxPriorParams, GeodesicParams};
use clickseg::rgb::RgbImage;
use clickseg::synth::{generate_scene, SceneParams};
use wasm_bindgen::prelude::*;

/// Pixels added around the object when drawing its box.
const BOX_PAD: f64 = 4.0;

#[wasm_bindgen]
pub struct Session {
    image: RgbImage,
    gt: Mask,
    box_mask: Mask,
    initial: Mask,
    mask: Mask,
    clicks: Vec<Click>,
    round: u32,
    seed: u64,
    class: String,
}

fn padded_box_mask(gt: &Mask) -> Mask {
    let (w, h) = gt.dims();
    let b = gt.bbox().unwrap_or_else(|| BBox::new(0.0, 0.0, w as f64, h as f64));
    let (x0, y0) = ((b.x - BOX_PAD).max(0.0), (b.y - BOX_PAD).max(0.0));
    let (x1, y1) = (
        (b.right() + BOX_PAD).min(w as f64),
        (b.bottom() + BOX_PAD).min(h as f64),
    );
    Mask::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64 + 0.5, y as f64 + 0.5);
        x >= x0 && x < x1 && y >= y0 && y < y1
    })
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Session {
    /// Scene `index` of the synthetic set generated from `seed`. The initial
    /// mask comes from the box alone.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, index: usize) -> Result<Session, JsError> {
        let scene = generate_scene(seed, index, &SceneParams::default());
        let box_mask = padded_box_mask(&scene.gt);
        let initial = box_prior_refine(&scene.image, &box_mask, &BoxPriorParams::default()).map_err(err)?;
        Ok(Session {
            image: scene.image,
            gt: scene.gt,
            box_mask,
            mask: initial.clone(),
            initial,
            clicks: Vec::new(),
            round: 0,
            seed,
            class: scene.class,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    #[wasm_bindgen(getter)]
    pub fn class(&self) -> String {
        self.class.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn click_count(&self) -> usize {
        self.clicks.len()
    }

    pub fn iou(&self) -> f64 {
        iou(&self.mask, &self.gt).unwrap_or(0.0)
    }

    pub fn boundary_f(&self) -> f64 {
        boundary_f(&self.mask, &self.gt, 5.0).unwrap_or(0.0)
    }

    /// Back to the box-only mask with no clicks.
    pub fn reset(&mut self) {
        self.mask = self.initial.clone();
        self.clicks.clear();
        self.round = 0;
    }

    fn refine(&mut self) -> Result<f64, JsError> {
        self.mask = geodesic_click_refine(
            &self.image,
            &self.box_mask,
            &self.clicks,
            &self.mask,
            &GeodesicParams::default(),
        )
        .map_err(err)?;
        Ok(self.iou())
    }

    /// A hand-placed click, refined immediately. Each click is its own round.
    pub fn click(&mut self, x: f64, y: f64, positive: bool) -> Result<f64, JsError> {
        if !(x >= 0.0 && y >= 0.0 && x < self.width() as f64 && y < self.height() as f64) {
            return Err(JsError::new("click outside the image"));
        }
        self.round += 1;
        let polarity = if positive {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        self.clicks.push(Click::new(x, y, polarity, self.round));
        self.refine()
    }

    /// One simulated annotator round: up to `clicks` corrective clicks with
    /// `sigma` pixels of placement noise, then a refinement. Returns the
    /// number of clicks placed; 0 means the annotator saw nothing to fix.
    pub fn step_annotator(&mut self, clicks: usize, sigma: f64, boundary: bool) -> Result<usize, JsError> {
        let model = AnnotatorModel {
            click_sigma: sigma,
            max_clicks_per_round: clicks.max(1),
            placement: if boundary {
                Placement::Boundary
            } else {
                Placement::RegionCentre
            },
            ..AnnotatorModel::blueprint()
        };
        let round = self.round + 1;
        let mut rng = substream(self.seed, "demo", round);
        let answer = simulate_round(&self.mask, &self.gt, &model, round, &mut rng).map_err(err)?;
        let placed = answer.clicks().len();
        if placed > 0 {
            self.round = round;
            self.clicks.extend_from_slice(answer.clicks());
            self.refine()?;
        }
        Ok(placed)
    }

    /// The image with the mask tinted green, the true outline in white and
    /// clicks as dots (green positive, red negative).
    pub fn render(&self, show_truth: bool) -> Vec<u8> {
        let (w, h) = (self.width(), self.height());
        let truth = boundary_pixels(&self.gt);
        let mut out = Vec::with_capacity(w * h * 4);
        for y in 0..h {
            for x in 0..w {
                let mut c = self.image.get(x, y);
                if self.mask.get(x, y) {
                    c = [c[0] * 0.5, c[1] * 0.5 + 0.5, c[2] * 0.5];
                }
                if show_truth && truth.get(x, y) {
                    c = [1.0, 1.0, 1.0];
                }
                out.extend(c.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
                out.push(255);
            }
        }
        for c in &self.clicks {
            let color = match c.polarity {
                Polarity::Positive => [40, 220, 60],
                Polarity::Negative => [230, 40, 40],
            };
            let (cx, cy) = c.pixel();
            for dy in -2i64..=2 {
                for dx in -2i64..=2 {
                    let (x, y) = (cx + dx, cy + dy);
                    if dx * dx + dy * dy <= 5 && x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                        let i = (y as usize * w + x as usize) * 4;
                        out[i..i + 3].copy_from_slice(&color);
                    }
                }
            }
        }
        out
    }

    /// Click planes under an encoding: `kind` is "disk", "gaussian" or
    /// "distance" with `param` its radius, sigma or truncation. Positive
    /// clicks go to the red channel and negative to blue; with `dual` false
    /// both share one plane, shown grey.
    pub fn encoding(&self, kind: &str, param: f64, dual: bool) -> Result<Vec<u8>, JsError> {
        let kind = match kind {
            "disk" => EncodingKind::Disk { radius: param },
            "gaussian" => EncodingKind::Gaussian { sigma: param },
            "distance" => EncodingKind::DistanceTransform { truncation: param },
            other => return Err(JsError::new(&format!("unknown encoding {other}"))),
        };
        let layout = if dual {
            ChannelLayout::Dual
        } else {
            ChannelLayout::Single
        };
        let (w, h) = (self.width(), self.height());
        let planes = rasterize_clicks(&self.clicks, &ClickEncoding { kind, layout }, w, h).map_err(err)?;
        let mut out = Vec::with_capacity(w * h * 4);
        for y in 0..h {
            for x in 0..w {
                let a = planes[0].get(x, y);
                let (r, g, b) = match planes.get(1) {
                    Some(neg) => (a, 0.0, neg.get(x, y)),
                    None => (a, a, a),
                };
                out.extend([r, g, b].map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
                out.push(255);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_click_inside_a_miss_does_not_lower_iou() {
        let mut s = Session::new(3, 0).unwrap();
        let before = s.iou();
        let (x, y) = s.gt.iter_set().find(|&(x, y)| !s.mask.get(x, y)).unwrap_or((100, 100));
        let after = s.click(x as f64 + 0.5, y as f64 + 0.5, true).unwrap();
        assert!(after + 1e-9 >= before * 0.98, "{before} -> {after}");
        assert_eq!(s.click_count(), 1);
    }

    #[test]
    fn annotator_rounds_are_reproducible_and_reset_clears_them() {
        let run = || {
            let mut s = Session::new(5, 1).unwrap();
            for _ in 0..3 {
                s.step_annotator(3, 3.0, false).unwrap();
            }
            (s.iou(), s.click_count(), s.render(true))
        };
        let a = run();
        assert_eq!(a, run());
        let mut s = Session::new(5, 1).unwrap();
        let start = s.iou();
        s.step_annotator(3, 0.0, false).unwrap();
        s.reset();
        assert_eq!((s.iou(), s.click_count(), s.round()), (start, 0, 0));
    }

    #[test]
    fn encodings_put_polarities_in_separate_channels() {
        let mut s = Session::new(1, 2).unwrap();
        s.click(50.5, 50.5, true).unwrap();
        s.click(150.5, 150.5, false).unwrap();
        let w = s.width();
        let px = |buf: &[u8], x: usize, y: usize| buf[(y * w + x) * 4..(y * w + x) * 4 + 3].to_vec();
        let dual = s.encoding("disk", 5.0, true).unwrap();
        assert_eq!(px(&dual, 50, 50), vec![255, 0, 0]);
        assert_eq!(px(&dual, 150, 150), vec![0, 0, 255]);
        assert_eq!(px(&dual, 100, 100), vec![0, 0, 0]);
        let single = s.encoding("gaussian", 10.0, false).unwrap();
        assert_eq!(px(&single, 150, 150), vec![255, 255, 255]);
    }
}
