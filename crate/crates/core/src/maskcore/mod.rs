//! Binary masks, boxes, run-length codecs and segmentation metrics.
//!
//! Pixel coordinates are `(x, y)` with `x` growing right and `y` down. Storage
//! is row-major throughout.

pub(crate) mod components;
mod distance;
mod metrics;
mod rle;

pub use components::{connected_components, Connectivity, Region};
pub use distance::{distance_transform, region_center, DistanceField};
pub use metrics::{boundary_f, boundary_pixels, iou};
pub use rle::{rle_decode, rle_encode, RleMask};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions {a_w}x{a_h} and {b_w}x{b_h} differ")]
    DimensionMismatch {
        a_w: usize,
        a_h: usize,
        b_w: usize,
        b_h: usize,
    },
    #[error("mask dimensions must be at least 1x1, got {0}x{1}")]
    InvalidDimensions(usize, usize),
    #[error("bit buffer holds {got} values, expected {expected}")]
    BitsLength { expected: usize, got: usize },
    #[error("undefined distance field: mask has no true pixel")]
    EmptyDistanceField,
    #[error("rle counts sum to {got}, expected {expected}")]
    RleSum { expected: u64, got: u64 },
    #[error("rle count at position {0} is zero")]
    RleInteriorZero(usize),
}

/// A binary instance mask.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RleMask", try_from = "RleMask")]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Mask({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl Mask {
    /// All-false mask. Panics on zero dimensions.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "mask dimensions must be >= 1");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::InvalidDimensions(width, height));
        }
        if bits.len() != width * height {
            return Err(MaskError::BitsLength {
                expected: width * height,
                got: bits.len(),
            });
        }
        Ok(Self { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    /// Mask with the given pixels set. Out-of-range pixels are ignored.
    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Self {
        let mut m = Self::new(width, height);
        for &(x, y) in pixels {
            if x < width && y < height {
                m.set(x, y, true);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Like [`Mask::get`] but false outside the grid.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn check_same_dims(&self, other: &Mask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                a_w: self.width,
                a_h: self.height,
                b_w: other.width,
                b_h: other.height,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Result<Mask, MaskError> {
        self.check_same_dims(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn xor(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a != b)
    }

    /// `self ∧ ¬other`
    pub fn and_not(&self, other: &Mask) -> Result<Mask, MaskError> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Tight bounds of the set pixels.
    pub fn bbox(&self) -> Option<BBox> {
        self.pixel_bounds()
            .map(|(x0, y0, x1, y1)| BBox::from_pixel_bounds(x0, y0, x1, y1))
    }

    /// Erosion by a Euclidean disk of the given radius. Outside the grid counts as
    /// background.
    pub fn erode(&self, radius: f64) -> Mask {
        if radius <= 0.0 {
            return self.clone();
        }
        let Some((x0, y0, x1, y1)) = self.pixel_bounds() else {
            return self.clone();
        };
        // everything outside the tight bounds is background, so the window is exact
        let sub = self.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
        let (w, h) = sub.dims();
        let padded = Mask::from_fn(w + 2, h + 2, |x, y| {
            x == 0 || y == 0 || x == w + 1 || y == h + 1 || !sub.get(x - 1, y - 1)
        });
        let r2 = radius * radius;
        let mut out = Mask::new(self.width, self.height);
        if radius < 16.0 {
            // The background pixel nearest to any foreground pixel has a
            // foreground 4-neighbour, so stamping disks around those pixels
            // removes exactly the pixels within `radius` of the background.
            let r = radius.floor() as i64;
            let disk: Vec<(i64, i64)> = (-r..=r)
                .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
                .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= r2)
                .collect();
            let mut keep = padded.clone();
            keep.bits.iter_mut().for_each(|b| *b = !*b);
            let (pw, ph) = (w as i64 + 2, h as i64 + 2);
            for y in 0..ph {
                for x in 0..pw {
                    if !padded.get(x as usize, y as usize) {
                        continue;
                    }
                    let touches = [(0, -1), (-1, 0), (1, 0), (0, 1)]
                        .iter()
                        .any(|&(dx, dy)| in_grid(x + dx, y + dy, pw, ph) && !padded.get_signed(x + dx, y + dy));
                    if !touches {
                        continue;
                    }
                    for &(dx, dy) in &disk {
                        let (nx, ny) = (x + dx, y + dy);
                        if in_grid(nx, ny, pw, ph) {
                            keep.set(nx as usize, ny as usize, false);
                        }
                    }
                }
            }
            for y in 0..h {
                for x in 0..w {
                    if keep.get(x + 1, y + 1) {
                        out.set(x0 + x, y0 + y, true);
                    }
                }
            }
            return out;
        }
        let field = distance_transform(&padded).expect("padding guarantees a background pixel");
        for (x, y) in sub.iter_set() {
            if field.sq(x + 1, y + 1) > r2 {
                out.set(x0 + x, y0 + y, true);
            }
        }
        out
    }

    /// Inclusive pixel bounds `(x0, y0, x1, y1)` of the set pixels.
    pub fn pixel_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&v| v) else {
                continue;
            };
            let last = row.iter().rposition(|&v| v).expect("row has a set pixel");
            b = Some(match b {
                None => (first, y, last, y),
                Some((a, c, d, _)) => (a.min(first), c, d.max(last), y),
            });
        }
        b
    }

    /// The `w × h` window at `(x, y)`. Panics if it leaves the grid.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Mask {
        assert!(x + w <= self.width && y + h <= self.height, "crop outside the mask");
        Mask::from_fn(w, h, |u, v| self.get(x + u, y + v))
    }

    /// 8-bit single-channel portable graymap (`P5`), 0 = background, 255 = foreground.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }
}

/// Axis-aligned box in continuous pixel units. Pixel `(x, y)` covers
/// `[x, x+1) × [y, y+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Box covering pixels `x0..=x1`, `y0..=y1`.
    pub fn from_pixel_bounds(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn is_valid(&self) -> bool {
        self.w >= 1.0 && self.h >= 1.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    /// `[x, y, w, h]` as used in manifests.
    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        BBox::new(a[0], a[1], a[2], a[3])
    }
}

fn in_grid(x: i64, y: i64, w: i64, h: i64) -> bool {
    x >= 0 && y >= 0 && x < w && y < h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_bits_checks_length() {
        assert!(matches!(
            Mask::from_bits(2, 2, vec![true; 3]),
            Err(MaskError::BitsLength { .. })
        ));
        assert!(Mask::from_bits(0, 2, vec![]).is_err());
    }

    #[test]
    fn bbox_of_pixels() {
        let m = Mask::from_pixels(10, 10, &[(2, 3), (5, 4)]);
        assert_eq!(m.bbox(), Some(BBox::new(2.0, 3.0, 4.0, 2.0)));
        assert_eq!(Mask::new(3, 3).bbox(), None);
    }

    #[test]
    fn box_iou_hand_values() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 0.0, 2.0, 2.0);
        assert!((a.iou(&b) - 2.0 / 6.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
    }

    #[test]
    fn erode_square() {
        let m = Mask::from_fn(11, 11, |x, y| (1..10).contains(&x) && (1..10).contains(&y));
        let e = m.erode(2.0);
        // pixels at distance > 2 from background survive: 3..=7
        assert_eq!(e.count(), 25);
        assert!(e.get(5, 5) && !e.get(2, 5));
    }

    #[test]
    fn pgm_header() {
        let m = Mask::from_pixels(2, 1, &[(1, 0)]);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n2 1\n255\n"));
        assert_eq!(&pgm[pgm.len() - 2..], &[0, 255]);
    }
}
