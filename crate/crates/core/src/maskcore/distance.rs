//! Exact Euclidean distance transform (separable lower-envelope algorithm of
//! Felzenszwalb & Huttenlocher) and the region pole of inaccessibility.

use super::{Mask, MaskError, Region};

const INF: f64 = 1e20;

/// Per-pixel Euclidean distance to the nearest true pixel of a mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    sq: Vec<f64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Squared distance, an exact integer.
    #[inline]
    pub fn sq(&self, x: usize, y: usize) -> f64 {
        self.sq[y * self.width + x]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.sq(x, y).sqrt()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.sq.iter().map(|v| v.sqrt())
    }
}

/// Distance from every pixel to the nearest true pixel of `m`.
pub fn distance_transform(m: &Mask) -> Result<DistanceField, MaskError> {
    if m.is_blank() {
        return Err(MaskError::EmptyDistanceField);
    }
    let (w, h) = m.dims();
    let mut sq: Vec<f64> = m.bits().iter().map(|&b| if b { 0.0 } else { INF }).collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for x in 0..w {
        for y in 0..h {
            f[y] = sq[y * w + x];
        }
        lower_envelope(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            sq[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        let row = &mut sq[y * w..(y + 1) * w];
        f[..w].copy_from_slice(row);
        lower_envelope(&f[..w], &mut d[..w], &mut v, &mut z);
        row.copy_from_slice(&d[..w]);
    }
    Ok(DistanceField {
        width: w,
        height: h,
        sq,
    })
}

/// 1-D squared distance transform of the sampled function `f`. Sites with
/// `f >= INF` are skipped; an all-INF input yields INF everywhere.
fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if f[q] >= INF {
            continue;
        }
        let qf = q as f64;
        let mut s = f64::NEG_INFINITY;
        while k >= 0 {
            let p = v[k as usize];
            let pf = p as f64;
            s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            if s <= z[k as usize] {
                k -= 1;
            } else {
                break;
            }
        }
        if k < 0 {
            k = 0;
            v[0] = q;
            z[0] = f64::NEG_INFINITY;
            z[1] = f64::INFINITY;
        } else {
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
        }
    }
    if k < 0 {
        d.fill(INF);
        return;
    }
    let mut k = 0usize;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// The region pixel farthest from the region's complement (outside the grid
/// counts as complement). Ties go to the smallest `(y, x)`.
pub fn region_center(r: &Region) -> (usize, usize) {
    assert!(r.area >= 1, "region_center needs a non-empty region");
    let x0 = r.bbox.x as usize;
    let y0 = r.bbox.y as usize;
    let w = r.bbox.w as usize + 2;
    let h = r.bbox.h as usize + 2;
    let mut outside = Mask::from_fn(w, h, |_, _| true);
    for &(x, y) in &r.pixels {
        outside.set(x - x0 + 1, y - y0 + 1, false);
    }
    let field = distance_transform(&outside).expect("padding is always outside");
    let mut best = r.pixels[0];
    let mut best_d = -1.0;
    // pixels are row-major, so a strict comparison keeps the earliest maximum
    for &(x, y) in &r.pixels {
        let d = field.sq(x - x0 + 1, y - y0 + 1);
        if d > best_d {
            best_d = d;
            best = (x, y);
        }
    }
    best
}
