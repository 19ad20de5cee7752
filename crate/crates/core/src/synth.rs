//! Procedural two- and three-colour scenes with exact ground truth.
//!
//! Each scene holds one object whose tight box exceeds 80×80 pixels. To give
//! refiners something to get wrong, scenes add sensor noise, object parts
//! painted in a background colour, object-coloured distractor blobs near the
//! object and small clutter patches.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::annsim::substream;
use crate::campaign::{ImageEntry, InstanceEntry, Manifest, MemoryImageStore};
use crate::maskcore::{rle_encode, Mask};
use crate::rgb::RgbImage;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    /// Per-channel Gaussian noise, colour units.
    pub noise_sigma: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            width: 200,
            height: 200,
            noise_sigma: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: RgbImage,
    pub gt: Mask,
    pub class: String,
}

const CLASSES: [&str; 3] = ["blob", "star", "ring"];

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()]
}

fn distinct_color(rng: &mut impl Rng, others: &[[f32; 3]], min_dist: f64) -> [f32; 3] {
    loop {
        let c = random_color(rng);
        if others.iter().all(|o| RgbImage::color_distance(c, *o) >= min_dist) {
            return c;
        }
    }
}

/// Star-shaped region `r(θ) = R (1 + Σ a_k cos(kθ + φ_k))` around a centre.
struct Shape {
    cx: f64,
    cy: f64,
    radius: f64,
    harmonics: Vec<(f64, f64, f64)>,
    hole: f64,
}

impl Shape {
    fn radius_at(&self, theta: f64) -> f64 {
        let s: f64 = self
            .harmonics
            .iter()
            .map(|&(k, a, phi)| a * (k * theta + phi).cos())
            .sum();
        self.radius * (1.0 + s)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let d = (dx * dx + dy * dy).sqrt();
        d <= self.radius_at(dy.atan2(dx)) && d >= self.hole
    }
}

pub fn generate_scene(seed: u64, index: usize, params: &SceneParams) -> Scene {
    let mut rng = substream(seed, "synth", index as u32);
    let (w, h) = (params.width, params.height);
    let class_idx = index % CLASSES.len();
    let three = index % 2 == 1;

    let bg_a = random_color(&mut rng);
    let bg_b = if three {
        distinct_color(&mut rng, &[bg_a], 0.25)
    } else {
        bg_a
    };
    let obj = distinct_color(&mut rng, &[bg_a, bg_b], 0.3);

    let size = w.min(h) as f64;
    let radius = rng.random_range(0.27..0.33) * size;
    let margin = radius * 1.4;
    let shape = Shape {
        cx: rng.random_range(margin..w as f64 - margin),
        cy: rng.random_range(margin..h as f64 - margin),
        radius,
        harmonics: match class_idx {
            0 => vec![
                (2.0, rng.random_range(0.05..0.2), rng.random_range(0.0..TAU)),
                (3.0, rng.random_range(0.03..0.12), rng.random_range(0.0..TAU)),
            ],
            1 => vec![(
                rng.random_range(4..7) as f64,
                rng.random_range(0.2..0.35),
                rng.random_range(0.0..TAU),
            )],
            _ => vec![(2.0, rng.random_range(0.02..0.1), rng.random_range(0.0..TAU))],
        },
        hole: if class_idx == 2 {
            radius * rng.random_range(0.25..0.4)
        } else {
            0.0
        },
    };

    // background split: a straight edge at a random angle through the frame
    let split_angle = rng.random_range(0.0..TAU);
    let split_off = rng.random_range(-0.3..0.3) * size;
    let (sa, ca) = split_angle.sin_cos();
    let bg_at = |x: f64, y: f64| {
        let d = (x - w as f64 / 2.0) * ca + (y - h as f64 / 2.0) * sa;
        if d < split_off {
            bg_a
        } else {
            bg_b
        }
    };

    // object parts that look like background
    let n_parts = rng.random_range(2..6);
    let parts: Vec<(f64, f64, f64)> = (0..n_parts)
        .map(|_| {
            let a = rng.random_range(0.0..TAU);
            let r = shape.radius_at(a) * rng.random_range(0.45..0.95);
            (
                shape.cx + r * a.cos(),
                shape.cy + r * a.sin(),
                rng.random_range(4.0..12.0),
            )
        })
        .collect();
    // object-coloured blobs touching the object from outside
    let n_distract = rng.random_range(2..6);
    let distractors: Vec<(f64, f64, f64)> = (0..n_distract)
        .map(|_| {
            let a = rng.random_range(0.0..TAU);
            let rad = rng.random_range(4.0..12.0);
            let r = shape.radius_at(a) + rad * rng.random_range(0.2..0.9);
            (shape.cx + r * a.cos(), shape.cy + r * a.sin(), rad)
        })
        .collect();
    // thin strands across the outline: object-coloured outward, background-coloured inward
    let n_strands = rng.random_range(2..5);
    let strands: Vec<(f64, f64, f64, f64, f64, bool)> = (0..n_strands)
        .map(|_| {
            let a = rng.random_range(0.0..TAU);
            let r0 = shape.radius_at(a);
            let len = rng.random_range(12.0..35.0);
            let outward = rng.random_bool(0.5);
            let (r1, r2) = if outward {
                (r0 - 2.0, r0 + len)
            } else {
                (r0 - len, r0 + 2.0)
            };
            (
                shape.cx + r1 * a.cos(),
                shape.cy + r1 * a.sin(),
                shape.cx + r2 * a.cos(),
                shape.cy + r2 * a.sin(),
                rng.random_range(0.8..2.0),
                outward,
            )
        })
        .collect();
    // clutter patches anywhere, in a fresh colour
    let clutter_color = distinct_color(&mut rng, &[obj], 0.2);
    let n_clutter = rng.random_range(2..6);
    let clutter: Vec<(f64, f64, f64, f64)> = (0..n_clutter)
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(3.0..12.0),
                rng.random_range(3.0..12.0),
            )
        })
        .collect();
    let on_strand = |px: f64, py: f64, outward: bool| {
        strands
            .iter()
            .filter(|s| s.5 == outward)
            .any(|&(x0, y0, x1, y1, hw, _)| {
                let (dx, dy) = (x1 - x0, y1 - y0);
                let t = (((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
                let (qx, qy) = (x0 + t * dx - px, y0 + t * dy - py);
                qx * qx + qy * qy <= hw * hw
            })
    };

    let inside = |x: f64, y: f64, c: &(f64, f64, f64)| (x - c.0).powi(2) + (y - c.1).powi(2) <= c.2 * c.2;
    let gt = Mask::from_fn(w, h, |x, y| shape.contains(x as f64 + 0.5, y as f64 + 0.5));
    let noise = Normal::new(0.0, params.noise_sigma.max(1e-12)).expect("noise sigma");
    let image = RgbImage::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut c = if gt.get(x, y) {
            if parts.iter().any(|p| inside(px, py, p)) || on_strand(px, py, false) {
                bg_at(px, py)
            } else {
                obj
            }
        } else if distractors.iter().any(|d| inside(px, py, d)) || on_strand(px, py, true) {
            obj
        } else {
            bg_at(px, py)
        };
        if !gt.get(x, y)
            && clutter
                .iter()
                .any(|&(cx, cy, cw, ch)| px >= cx && px < cx + cw && py >= cy && py < cy + ch)
        {
            c = clutter_color;
        }
        if params.noise_sigma > 0.0 {
            for v in &mut c {
                *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
        }
        c
    });
    // quantise like a stored 8-bit image so in-memory and on-disk datasets agree
    let image = RgbImage::from_rgb8(w, h, &image.to_rgb8());
    Scene {
        image,
        gt,
        class: CLASSES[class_idx].to_string(),
    }
}

/// `n` scenes as a manifest plus an in-memory image store. Instance and image
/// ids are `s0000`, `s0001`, ...; paths are `images/<id>.png`.
pub fn generate_dataset(n: usize, seed: u64, params: &SceneParams) -> (Manifest, MemoryImageStore) {
    let mut manifest = Manifest::default();
    let mut store = MemoryImageStore::default();
    for i in 0..n {
        let scene = generate_scene(seed, i, params);
        let id = format!("s{i:04}");
        let bbox = scene.gt.bbox().expect("scene object is non-empty");
        manifest.images.push(ImageEntry {
            id: id.clone(),
            path: format!("images/{id}.png"),
            width: params.width,
            height: params.height,
        });
        manifest.instances.push(InstanceEntry {
            id: id.clone(),
            image_id: id.clone(),
            class: scene.class.clone(),
            bbox: bbox.to_array(),
            gt_rle: Some(rle_encode(&scene.gt)),
            gt_polygon: None,
        });
        store.images.insert(id, scene.image);
    }
    (manifest, store)
}

/// Writes PNGs and `manifest.json` under `dir`.
#[cfg(feature = "io")]
pub fn write_dataset(
    dir: impl AsRef<std::path::Path>,
    n: usize,
    seed: u64,
    params: &SceneParams,
) -> Result<Manifest, crate::campaign::CampaignError> {
    use crate::campaign::CampaignError;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("images"))?;
    let (manifest, store) = generate_dataset(n, seed, params);
    for img in &manifest.images {
        store.images[&img.id]
            .save_png(dir.join(&img.path))
            .map_err(|e| CampaignError::Manifest(format!("{}: {e}", img.path)))?;
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic() {
        let p = SceneParams::default();
        let a = generate_scene(3, 7, &p);
        let b = generate_scene(3, 7, &p);
        assert_eq!(a.image, b.image);
        assert_eq!(a.gt, b.gt);
        assert_ne!(generate_scene(4, 7, &p).gt, a.gt);
    }

    #[test]
    fn objects_pass_the_blueprint_size_filter() {
        let p = SceneParams::default();
        for i in 0..60 {
            let s = generate_scene(11, i, &p);
            let b = s.gt.bbox().unwrap();
            assert!(b.w > 80.0 && b.h > 80.0, "scene {i}: {b:?}");
            assert!(b.x >= 1.0 && b.y >= 1.0 && b.right() < 199.0 && b.bottom() < 199.0);
        }
    }
}
