//! Geometry between image space and the square model canvas, and rasterisation
//! of boxes and clicks into input planes.
//!
//! Canvas and image coordinates are continuous; pixel `(i, j)` covers
//! `[i, i+1) × [j, j+1)` and is sampled at its centre `(i + 0.5, j + 0.5)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annsim::{Click, Polarity};
use crate::maskcore::{BBox, Mask};
use crate::rgb::RgbImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("inner size {inner} must be smaller than outer size {outer}")]
    InnerNotSmaller { inner: usize, outer: usize },
    #[error("box {0:?} is degenerate")]
    DegenerateBox(BBox),
    #[error("click at ({x}, {y}) lies outside the {width}x{height} canvas")]
    ClickOutsideCanvas {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("invalid click encoding: {0}")]
    Encoding(String),
    #[error("malformed input stack: {0}")]
    Stack(String),
}

/// Named crop geometry and instance size filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeometryProfile {
    /// 193 px box inside a 385 px canvas; instances larger than 80×80.
    #[default]
    Blueprint,
    /// 385 px box inside a 513 px canvas; instances at least 80×40 or 40×80.
    Campaign,
}

impl GeometryProfile {
    pub fn inner(self) -> usize {
        match self {
            GeometryProfile::Blueprint => 193,
            GeometryProfile::Campaign => 385,
        }
    }

    pub fn outer(self) -> usize {
        match self {
            GeometryProfile::Blueprint => 385,
            GeometryProfile::Campaign => 513,
        }
    }

    /// Whether an instance of the given size passes the profile's size filter.
    pub fn accepts_size(self, w: f64, h: f64) -> bool {
        match self {
            GeometryProfile::Blueprint => w > 80.0 && h > 80.0,
            GeometryProfile::Campaign => (w >= 80.0 && h >= 40.0) || (w >= 40.0 && h >= 80.0),
        }
    }
}

/// Maps image coordinates to canvas coordinates: `canvas = image * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropTransform {
    pub scale: f64,
    pub offset_x: f64,
    pub offset_y: f64,
    pub inner: usize,
    pub outer: usize,
    pub image_width: usize,
    pub image_height: usize,
}

/// Fits `bbox` inside a centred `inner × inner` square of an `outer × outer` canvas.
pub fn make_transform(
    bbox: &BBox,
    image_dims: (usize, usize),
    inner: usize,
    outer: usize,
) -> Result<CropTransform, GeomError> {
    if inner >= outer {
        return Err(GeomError::InnerNotSmaller { inner, outer });
    }
    if !bbox.is_valid() {
        return Err(GeomError::DegenerateBox(*bbox));
    }
    let scale = inner as f64 / bbox.w.max(bbox.h);
    let (cx, cy) = bbox.center();
    let half = outer as f64 / 2.0;
    Ok(CropTransform {
        scale,
        offset_x: half - cx * scale,
        offset_y: half - cy * scale,
        inner,
        outer,
        image_width: image_dims.0,
        image_height: image_dims.1,
    })
}

impl CropTransform {
    pub fn to_canvas(&self, x: f64, y: f64) -> (f64, f64) {
        (x * self.scale + self.offset_x, y * self.scale + self.offset_y)
    }

    pub fn to_image(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.offset_x) / self.scale, (v - self.offset_y) / self.scale)
    }

    pub fn box_to_canvas(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_canvas(b.x, b.y);
        BBox::new(x, y, b.w * self.scale, b.h * self.scale)
    }

    /// Canvas pixels whose centres fall inside the source image.
    pub fn footprint(&self) -> Mask {
        self.box_mask(&BBox::new(0.0, 0.0, self.image_width as f64, self.image_height as f64))
    }

    /// Binary inside/outside rendering of an image-space box on the canvas.
    pub fn box_mask(&self, b: &BBox) -> Mask {
        let cb = self.box_to_canvas(b);
        Mask::from_fn(self.outer, self.outer, |u, v| {
            cb.contains_point(u as f64 + 0.5, v as f64 + 0.5)
        })
    }
}

/// Bilinear resampling of `image` onto the canvas; black outside the source.
pub fn warp_image(image: &RgbImage, t: &CropTransform) -> RgbImage {
    let (w, h) = (image.width() as f64, image.height() as f64);
    RgbImage::from_fn(t.outer, t.outer, |u, v| {
        let (x, y) = t.to_image(u as f64 + 0.5, v as f64 + 0.5);
        if x < 0.0 || y < 0.0 || x >= w || y >= h {
            return [0.0; 3];
        }
        let fx = (x - 0.5).clamp(0.0, w - 1.0);
        let fy = (y - 0.5).clamp(0.0, h - 1.0);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(image.width() - 1);
        let y1 = (y0 + 1).min(image.height() - 1);
        let ax = (fx - x0 as f64) as f32;
        let ay = (fy - y0 as f64) as f32;
        let (p00, p10, p01, p11) = (
            image.get(x0, y0),
            image.get(x1, y0),
            image.get(x0, y1),
            image.get(x1, y1),
        );
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - ax) + p10[c] * ax;
            let bottom = p01[c] * (1.0 - ax) + p11[c] * ax;
            out[c] = top * (1.0 - ay) + bottom * ay;
        }
        out
    })
}

/// Nearest-neighbour resampling of an image-space mask onto the canvas.
pub fn warp_mask(m: &Mask, t: &CropTransform) -> Mask {
    let (w, h) = (m.width() as f64, m.height() as f64);
    Mask::from_fn(t.outer, t.outer, |u, v| {
        let (x, y) = t.to_image(u as f64 + 0.5, v as f64 + 0.5);
        x >= 0.0 && y >= 0.0 && x < w && y < h && m.get(x as usize, y as usize)
    })
}

/// Nearest-neighbour resampling of a canvas mask back to image space. Image
/// pixels that map outside the canvas are background.
pub fn unwarp_mask(m: &Mask, t: &CropTransform) -> Mask {
    let outer = m.width() as f64;
    Mask::from_fn(t.image_width, t.image_height, |x, y| {
        let (u, v) = t.to_canvas(x as f64 + 0.5, y as f64 + 0.5);
        u >= 0.0 && v >= 0.0 && u < outer && v < outer && m.get(u as usize, v as usize)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodingKind {
    Disk { radius: f64 },
    Gaussian { sigma: f64 },
    DistanceTransform { truncation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    /// All clicks in one plane (boundary clicks).
    Single,
    /// Positive and negative clicks in separate planes (region clicks).
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickEncoding {
    #[serde(flatten)]
    pub kind: EncodingKind,
    pub layout: ChannelLayout,
}

impl ClickEncoding {
    pub const DEFAULT_SIGMA: f64 = 10.0;
    pub const DEFAULT_TRUNCATION: f64 = 20.0;

    pub fn disk(radius: f64, layout: ChannelLayout) -> Self {
        Self {
            kind: EncodingKind::Disk { radius },
            layout,
        }
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let ok = match self.kind {
            EncodingKind::Disk { radius } => radius >= 0.0,
            EncodingKind::Gaussian { sigma } => sigma > 0.0,
            EncodingKind::DistanceTransform { truncation } => truncation > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(GeomError::Encoding(format!("{:?}", self.kind)))
        }
    }

    pub fn channel_count(&self) -> usize {
        match self.layout {
            ChannelLayout::Single => 1,
            ChannelLayout::Dual => 2,
        }
    }
}

impl Default for ClickEncoding {
    fn default() -> Self {
        Self::disk(5.0, ChannelLayout::Dual)
    }
}

/// A single float input plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn from_mask(m: &Mask) -> Self {
        Self {
            width: m.width(),
            height: m.height(),
            data: m.bits().iter().map(|&b| b as u8 as f32).collect(),
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

fn paint(plane: &mut Plane, click: &Click, kind: EncodingKind) {
    let (cx, cy) = (click.x, click.y);
    for y in 0..plane.height {
        let dy = y as f64 + 0.5 - cy;
        for x in 0..plane.width {
            let dx = x as f64 + 0.5 - cx;
            let d2 = dx * dx + dy * dy;
            let v = match kind {
                EncodingKind::Disk { radius } => {
                    if d2 <= radius * radius {
                        1.0
                    } else {
                        0.0
                    }
                }
                EncodingKind::Gaussian { sigma } => (-d2 / (2.0 * sigma * sigma)).exp(),
                EncodingKind::DistanceTransform { truncation } => 1.0 - d2.sqrt().min(truncation) / truncation,
            } as f32;
            let slot = &mut plane.data[y * plane.width + x];
            *slot = slot.max(v);
        }
    }
}

/// Renders clicks into one plane (single layout) or two planes, positive then
/// negative (dual layout).
pub fn rasterize_clicks(
    clicks: &[Click],
    enc: &ClickEncoding,
    width: usize,
    height: usize,
) -> Result<Vec<Plane>, GeomError> {
    enc.validate()?;
    for c in clicks {
        if !(c.x >= 0.0 && c.y >= 0.0 && c.x < width as f64 && c.y < height as f64) {
            return Err(GeomError::ClickOutsideCanvas {
                x: c.x,
                y: c.y,
                width,
                height,
            });
        }
    }
    let mut planes = vec![Plane::zeros(width, height); enc.channel_count()];
    for c in clicks {
        let idx = match (enc.layout, c.polarity) {
            (ChannelLayout::Single, _) | (ChannelLayout::Dual, Polarity::Positive) => 0,
            (ChannelLayout::Dual, Polarity::Negative) => 1,
        };
        paint(&mut planes[idx], c, enc.kind);
    }
    Ok(planes)
}

/// Named input planes, all `outer × outer`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    pub size: usize,
    pub channels: Vec<(String, Plane)>,
}

const STACK_MAGIC: &[u8; 4] = b"CSTK";

impl InputStack {
    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn channel(&self, name: &str) -> Option<&Plane> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    /// Little-endian binary form: magic `CSTK`, `u32` side, `u32` channel count,
    /// per channel a `u16` name length and UTF-8 name, then row-major `f32` planes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.channels.len() * (self.size * self.size * 4 + 8));
        out.extend_from_slice(STACK_MAGIC);
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels.len() as u32).to_le_bytes());
        for (name, _) in &self.channels {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for (_, plane) in &self.channels {
            for v in &plane.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GeomError> {
        let err = |m: &str| GeomError::Stack(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], GeomError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| err("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != STACK_MAGIC {
            return Err(err("bad magic"));
        }
        let size = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut names = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(len)?).map_err(|_| err("channel name is not UTF-8"))?;
            names.push(name.to_string());
        }
        let mut channels = Vec::with_capacity(count);
        for name in names {
            let raw = take(size * size * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            channels.push((
                name,
                Plane {
                    width: size,
                    height: size,
                    data,
                },
            ));
        }
        if pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(Self { size, channels })
    }
}

/// Stacks `r, g, b, box` and, when an encoding is given, one or two click planes.
pub fn build_input_stack(
    crop: &RgbImage,
    image_box: &BBox,
    t: &CropTransform,
    clicks: &[Click],
    enc: Option<&ClickEncoding>,
) -> Result<InputStack, GeomError> {
    let size = t.outer;
    let mut channels = Vec::with_capacity(6);
    for (c, name) in ["r", "g", "b"].into_iter().enumerate() {
        let data = crop.pixels().iter().map(|p| p[c].clamp(0.0, 1.0)).collect();
        channels.push((
            name.to_string(),
            Plane {
                width: size,
                height: size,
                data,
            },
        ));
    }
    channels.push(("box".to_string(), Plane::from_mask(&t.box_mask(image_box))));
    if let Some(enc) = enc {
        let planes = rasterize_clicks(clicks, enc, size, size)?;
        let names: &[&str] = match enc.layout {
            ChannelLayout::Single => &["clicks"],
            ChannelLayout::Dual => &["clicks_pos", "clicks_neg"],
        };
        for (name, plane) in names.iter().zip(planes) {
            channels.push((name.to_string(), plane));
        }
    }
    Ok(InputStack { size, channels })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn click(x: f64, y: f64, polarity: Polarity) -> Click {
        Click::new(x, y, polarity, 1)
    }

    #[test]
    fn transform_scales() {
        let t = make_transform(&BBox::new(0.0, 0.0, 193.0, 193.0), (400, 400), 193, 385).unwrap();
        assert_eq!(t.scale, 1.0);
        let t = make_transform(&BBox::new(0.0, 0.0, 386.0, 193.0), (400, 400), 193, 385).unwrap();
        assert_eq!(t.scale, 0.5);
        let b = BBox::new(10.0, 20.0, 100.0, 50.0);
        let t = make_transform(&b, (200, 200), 385, 513).unwrap();
        assert!((t.scale - 3.85).abs() < 1e-12);
        let cb = t.box_to_canvas(&b);
        assert!((cb.w - 385.0).abs() < 1e-9 && (cb.h - 192.5).abs() < 1e-9);
        let (cx, cy) = cb.center();
        assert!((cx - 256.5).abs() < 1e-9 && (cy - 256.5).abs() < 1e-9);
        assert!(make_transform(&b, (200, 200), 513, 513).is_err());
    }

    #[test]
    fn identity_warp_copies_pixels() {
        let img = RgbImage::from_fn(40, 40, |x, y| [x as f32 / 40.0, y as f32 / 40.0, 0.5]);
        // 20x20 box centred in a 40x40 canvas with scale 1
        let b = BBox::new(10.0, 10.0, 20.0, 20.0);
        let t = make_transform(&b, (40, 40), 20, 40).unwrap();
        assert_eq!(t.scale, 1.0);
        let out = warp_image(&img, &t);
        for y in 0..40 {
            for x in 0..40 {
                assert_eq!(out.get(x, y), img.get(x, y));
            }
        }
    }

    #[test]
    fn full_mask_warps_to_footprint() {
        let m = Mask::from_fn(60, 30, |_, _| true);
        let t = make_transform(&BBox::new(40.0, 5.0, 30.0, 20.0), (60, 30), 50, 101).unwrap();
        let warped = warp_mask(&m, &t);
        let fp = t.footprint();
        assert_eq!(warped, fp);
        assert!(fp.count() > 0 && fp.count() < 101 * 101);
    }

    #[test]
    fn disk_radius_five_has_81_pixels() {
        let enc = ClickEncoding::disk(5.0, ChannelLayout::Single);
        let planes = rasterize_clicks(&[click(20.5, 20.5, Polarity::Positive)], &enc, 41, 41).unwrap();
        assert_eq!(planes.len(), 1);
        assert_eq!(planes[0].count_nonzero(), 81);
    }

    #[test]
    fn radius_zero_marks_click_pixels() {
        let enc = ClickEncoding::disk(0.0, ChannelLayout::Single);
        let clicks = [click(3.5, 4.5, Polarity::Positive), click(7.5, 1.5, Polarity::Negative)];
        let planes = rasterize_clicks(&clicks, &enc, 10, 10).unwrap();
        assert_eq!(planes[0].count_nonzero(), 2);
        assert_eq!(planes[0].get(3, 4), 1.0);
        assert_eq!(planes[0].get(7, 1), 1.0);
    }

    #[test]
    fn gaussian_peak_and_decay() {
        let enc = ClickEncoding {
            kind: EncodingKind::Gaussian { sigma: 10.0 },
            layout: ChannelLayout::Single,
        };
        let planes = rasterize_clicks(&[click(10.5, 10.5, Polarity::Positive)], &enc, 40, 21).unwrap();
        assert_eq!(planes[0].get(10, 10), 1.0);
        for x in 10..39 {
            assert!(planes[0].get(x + 1, 10) < planes[0].get(x, 10));
        }
    }

    #[test]
    fn distance_transform_encoding() {
        let enc = ClickEncoding {
            kind: EncodingKind::DistanceTransform { truncation: 20.0 },
            layout: ChannelLayout::Single,
        };
        let planes = rasterize_clicks(&[click(0.5, 0.5, Polarity::Positive)], &enc, 30, 1).unwrap();
        assert_eq!(planes[0].get(0, 0), 1.0);
        assert!((planes[0].get(10, 0) - 0.5).abs() < 1e-6);
        assert_eq!(planes[0].get(25, 0), 0.0);
    }

    #[test]
    fn dual_layout_routes_by_polarity() {
        let enc = ClickEncoding::disk(2.0, ChannelLayout::Dual);
        let planes = rasterize_clicks(&[click(5.0, 5.0, Polarity::Positive)], &enc, 10, 10).unwrap();
        assert_eq!(planes.len(), 2);
        assert!(planes[0].count_nonzero() > 0);
        assert_eq!(planes[1].count_nonzero(), 0);
    }

    #[test]
    fn click_outside_canvas_rejected() {
        let enc = ClickEncoding::default();
        let err = rasterize_clicks(&[click(10.0, 3.0, Polarity::Positive)], &enc, 10, 10).unwrap_err();
        assert!(matches!(err, GeomError::ClickOutsideCanvas { .. }));
    }

    #[test]
    fn stack_channel_counts() {
        let b = BBox::new(5.0, 5.0, 20.0, 10.0);
        let t = make_transform(&b, (30, 30), 24, 33).unwrap();
        let crop = warp_image(&RgbImage::new(30, 30), &t);
        let c = [click(16.0, 16.0, Polarity::Negative)];
        let s = build_input_stack(&crop, &b, &t, &[], None).unwrap();
        assert_eq!(s.channel_names(), ["r", "g", "b", "box"]);
        let s = build_input_stack(&crop, &b, &t, &c, Some(&ClickEncoding::disk(5.0, ChannelLayout::Dual))).unwrap();
        assert_eq!(s.channels.len(), 6);
        let s = build_input_stack(
            &crop,
            &b,
            &t,
            &c,
            Some(&ClickEncoding::disk(5.0, ChannelLayout::Single)),
        )
        .unwrap();
        assert_eq!(s.channels.len(), 5);
        for (_, p) in &s.channels {
            assert_eq!((p.width, p.height), (33, 33));
            assert!(p.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let back = InputStack::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert!(InputStack::from_bytes(&s.to_bytes()[..40]).is_err());
    }
}
