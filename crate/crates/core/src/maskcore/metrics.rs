use super::{distance_transform, Mask, MaskError};

/// Intersection over union. Two empty masks score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64, MaskError> {
    a.check_same_dims(b)?;
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// True pixels with at least one false 4-neighbour; the image border counts
/// as false.
pub fn boundary_pixels(m: &Mask) -> Mask {
    let (w, h) = m.dims();
    let mut out = Mask::new(w, h);
    let Some((x0, y0, x1, y1)) = m.pixel_bounds() else {
        return out;
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (sx, sy) = (x as i64, y as i64);
            if m.get(x, y)
                && !(m.get_signed(sx - 1, sy)
                    && m.get_signed(sx + 1, sy)
                    && m.get_signed(sx, sy - 1)
                    && m.get_signed(sx, sy + 1))
            {
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Boundary F-measure with a Euclidean matching tolerance of `tol` pixels.
///
/// Precision is the fraction of predicted boundary pixels within `tol` of the
/// reference boundary; recall is the converse. Two empty masks score 1, one
/// empty mask scores 0.
pub fn boundary_f(pred: &Mask, gt: &Mask, tol: f64) -> Result<f64, MaskError> {
    pred.check_same_dims(gt)?;
    let bp = boundary_pixels(pred);
    let bg = boundary_pixels(gt);
    match (bp.is_blank(), bg.is_blank()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let tol2 = tol * tol;
    let matched: Box<dyn Fn(&Mask, &Mask) -> Result<f64, MaskError>> = if tol < 16.0 {
        // small tolerance: look for a hit among the offsets of the disk,
        // nearest first
        let r = tol.max(0.0).floor() as i64;
        let mut disk: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= tol2)
            .collect();
        disk.sort_by_key(|&(dx, dy)| dx * dx + dy * dy);
        Box::new(move |from: &Mask, to: &Mask| {
            let total = from.count();
            let hits = from
                .iter_set()
                .filter(|&(x, y)| {
                    let (x, y) = (x as i64, y as i64);
                    disk.iter().any(|&(dx, dy)| to.get_signed(x + dx, y + dy))
                })
                .count();
            Ok(hits as f64 / total as f64)
        })
    } else {
        // all boundary pixels lie in the union of both bounds, so distances
        // computed inside that window are exact
        let (a0, b0, a1, b1) = bp.pixel_bounds().expect("non-blank");
        let (c0, d0, c1, d1) = bg.pixel_bounds().expect("non-blank");
        let (x0, y0, x1, y1) = (a0.min(c0), b0.min(d0), a1.max(c1), b1.max(d1));
        Box::new(move |from: &Mask, to: &Mask| {
            let from = from.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1);
            let field = distance_transform(&to.crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1))?;
            let total = from.count();
            let hits = from.iter_set().filter(|&(x, y)| field.sq(x, y) <= tol2).count();
            Ok(hits as f64 / total as f64)
        })
    };
    let precision = matched(&bp, &bg)?;
    let recall = matched(&bg, &bp)?;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = Mask::from_pixels(3, 1, &[(0, 0), (1, 0)]);
        let b = Mask::from_pixels(3, 1, &[(1, 0), (2, 0)]);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let c = Mask::from_pixels(3, 1, &[(2, 0)]);
        let d = Mask::from_pixels(3, 1, &[(0, 0)]);
        assert_eq!(iou(&c, &d).unwrap(), 0.0);
        assert_eq!(iou(&Mask::new(3, 1), &Mask::new(3, 1)).unwrap(), 1.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        assert!(matches!(
            iou(&Mask::new(2, 2), &Mask::new(3, 2)),
            Err(MaskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn boundary_of_filled_square_is_its_ring() {
        let m = Mask::from_fn(5, 5, |_, _| true);
        assert_eq!(boundary_pixels(&m).count(), 16);
    }

    #[test]
    fn boundary_f_identity_and_far() {
        let a = Mask::from_fn(20, 20, |x, y| x < 5 && y < 5);
        assert_eq!(boundary_f(&a, &a, 0.0).unwrap(), 1.0);
        let b = Mask::from_fn(20, 20, |x, y| x >= 15 && y >= 15);
        assert_eq!(boundary_f(&a, &b, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn boundary_f_square_vs_dilation() {
        let sq = Mask::from_fn(14, 14, |x, y| (2..12).contains(&x) && (2..12).contains(&y));
        let dil = Mask::from_fn(14, 14, |x, y| (1..13).contains(&x) && (1..13).contains(&y));
        assert_eq!(boundary_f(&sq, &dil, 5.0).unwrap(), 1.0);
        // at zero tolerance the rings are disjoint
        assert_eq!(boundary_f(&sq, &dil, 0.0).unwrap(), 0.0);
    }
}
