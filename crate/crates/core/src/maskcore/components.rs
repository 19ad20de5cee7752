use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{BBox, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    pub(crate) fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(0, -1), (-1, 0), (1, 0), (0, 1)],
            Connectivity::Eight => &[(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)],
        }
    }
}

/// One connected component of a mask. `pixels` are in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub id: usize,
    pub area: usize,
    pub bbox: BBox,
    pub pixels: Vec<(usize, usize)>,
}

impl Region {
    /// Builds a region from an arbitrary pixel list (sorted and deduplicated here).
    pub fn from_pixels(id: usize, mut pixels: Vec<(usize, usize)>) -> Self {
        pixels.sort_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(x, y) in &pixels {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let bbox = if pixels.is_empty() {
            BBox::new(0.0, 0.0, 0.0, 0.0)
        } else {
            BBox::from_pixel_bounds(x0, y0, x1, y1)
        };
        Self {
            id,
            area: pixels.len(),
            bbox,
            pixels,
        }
    }

    /// Smallest pixel in row-major order.
    pub fn first_pixel(&self) -> (usize, usize) {
        self.pixels[0]
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.pixels.binary_search_by_key(&(y, x), |&(px, py)| (py, px)).is_ok()
    }

    /// The region rendered on a `width × height` grid.
    pub fn to_mask(&self, width: usize, height: usize) -> Mask {
        Mask::from_pixels(width, height, &self.pixels)
    }
}

/// Maximal connected sets of true pixels, ordered by decreasing area with ties
/// broken by the row-major position of each region's first pixel.
pub fn connected_components(m: &Mask, connectivity: Connectivity) -> Vec<Region> {
    let (w, h) = m.dims();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let mut regions = Vec::new();
    for start in 0..w * h {
        if !m.bits()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            pixels.push((x as usize, y as usize));
            for &(dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if m.get_signed(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        regions.push(Region::from_pixels(0, pixels));
    }
    // scan order already gives increasing first pixel; a stable sort keeps it for ties
    regions.sort_by_key(|r| std::cmp::Reverse(r.area));
    for (i, r) in regions.iter_mut().enumerate() {
        r.id = i;
    }
    regions
}

/// Label image: `Some(region index)` per pixel, indices into the output of
/// [`connected_components`].
pub(crate) fn label_map(regions: &[Region], width: usize, height: usize) -> Vec<Option<usize>> {
    let mut labels = vec![None; width * height];
    for (i, r) in regions.iter().enumerate() {
        for &(x, y) in &r.pixels {
            labels[y * width + x] = Some(i);
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(connected_components(&Mask::new(4, 4), Connectivity::Four).is_empty());
    }

    #[test]
    fn diagonal_pixels() {
        let m = Mask::from_pixels(2, 2, &[(0, 0), (1, 1)]);
        assert_eq!(connected_components(&m, Connectivity::Four).len(), 2);
        assert_eq!(connected_components(&m, Connectivity::Eight).len(), 1);
    }

    #[test]
    fn ordering_by_area_then_position() {
        // two singletons and one 3-pixel bar
        let m = Mask::from_pixels(6, 3, &[(5, 0), (0, 2), (1, 2), (2, 2), (0, 0)]);
        let regions = connected_components(&m, Connectivity::Four);
        assert_eq!(regions.len(), 3);
        assert_eq!(regions[0].area, 3);
        assert_eq!(regions[1].pixels, vec![(0, 0)]);
        assert_eq!(regions[2].pixels, vec![(5, 0)]);
        assert_eq!(regions[0].bbox, BBox::new(0.0, 2.0, 3.0, 1.0));
        assert!(regions.iter().enumerate().all(|(i, r)| r.id == i));
    }

    #[test]
    fn contains_uses_row_major_search() {
        let r = Region::from_pixels(0, vec![(3, 1), (0, 2), (2, 1)]);
        assert_eq!(r.first_pixel(), (2, 1));
        assert!(r.contains(0, 2) && !r.contains(1, 1));
    }
}
