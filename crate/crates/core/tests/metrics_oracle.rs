//! Fast mask metrics against brute-force definitions on random small masks.

use std::collections::BTreeSet;

use clickseg::maskcore::{
    boundary_f, boundary_pixels, connected_components, distance_transform, iou, Connectivity, Mask,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut impl Rng) -> Mask {
    let (w, h) = (rng.random_range(1..=32), rng.random_range(1..=32));
    match rng.random_range(0..3) {
        0 => {
            let p = rng.random::<f64>();
            Mask::from_fn(w, h, |_, _| rng.random_bool(p))
        }
        1 => {
            // a few discs
            let discs: Vec<(f64, f64, f64)> = (0..rng.random_range(1..4))
                .map(|_| {
                    (
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                        rng.random_range(1.0..10.0),
                    )
                })
                .collect();
            Mask::from_fn(w, h, |x, y| {
                discs
                    .iter()
                    .any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r)
            })
        }
        _ => Mask::new(w, h),
    }
}

fn same_dims_pair(rng: &mut impl Rng) -> (Mask, Mask) {
    let a = random_mask(rng);
    let (w, h) = a.dims();
    let p = rng.random::<f64>() * 0.3;
    let b = Mask::from_fn(w, h, |x, y| a.get(x, y) ^ rng.random_bool(p));
    (a, b)
}

fn brute_iou(a: &Mask, b: &Mask) -> f64 {
    let (w, h) = a.dims();
    let (mut i, mut u) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            i += (a.get(x, y) && b.get(x, y)) as usize;
            u += (a.get(x, y) || b.get(x, y)) as usize;
        }
    }
    if u == 0 {
        1.0
    } else {
        i as f64 / u as f64
    }
}

fn brute_boundary(m: &Mask) -> Vec<(i64, i64)> {
    let (w, h) = m.dims();
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let on = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && m.get(x as usize, y as usize);
            if on(x, y) && !(on(x - 1, y) && on(x + 1, y) && on(x, y - 1) && on(x, y + 1)) {
                out.push((x, y));
            }
        }
    }
    out
}

fn brute_boundary_f(p: &Mask, g: &Mask, tol: f64) -> f64 {
    let (bp, bg) = (brute_boundary(p), brute_boundary(g));
    match (bp.is_empty(), bg.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let frac = |from: &[(i64, i64)], to: &[(i64, i64)]| {
        let hits = from
            .iter()
            .filter(|&&(x, y)| {
                to.iter()
                    .any(|&(u, v)| (((x - u).pow(2) + (y - v).pow(2)) as f64) <= tol * tol)
            })
            .count();
        hits as f64 / from.len() as f64
    };
    let (pr, rc) = (frac(&bp, &bg), frac(&bg, &bp));
    if pr + rc == 0.0 {
        0.0
    } else {
        2.0 * pr * rc / (pr + rc)
    }
}

fn brute_components(m: &Mask, conn: Connectivity) -> BTreeSet<Vec<(usize, usize)>> {
    let (w, h) = m.dims();
    let mut parent: Vec<usize> = (0..w * h).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        r
    }
    let offsets: &[(i64, i64)] = match conn {
        Connectivity::Four => &[(1, 0), (0, 1)],
        Connectivity::Eight => &[(1, 0), (0, 1), (1, 1), (-1, 1)],
    };
    for y in 0..h {
        for x in 0..w {
            if !m.get(x, y) {
                continue;
            }
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if m.get_signed(nx, ny) {
                    let (a, b) = (
                        find(&mut parent, y * w + x),
                        find(&mut parent, ny as usize * w + nx as usize),
                    );
                    parent[a] = b;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<(usize, usize)>> = Default::default();
    for y in 0..h {
        for x in 0..w {
            if m.get(x, y) {
                let r = find(&mut parent, y * w + x);
                groups.entry(r).or_default().push((x, y));
            }
        }
    }
    groups.into_values().collect()
}

#[test]
fn iou_and_boundary_f_match_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..400 {
        let (a, b) = same_dims_pair(&mut rng);
        assert!((iou(&a, &b).unwrap() - brute_iou(&a, &b)).abs() <= 1e-9);
        let got: BTreeSet<_> = boundary_pixels(&a)
            .iter_set()
            .map(|(x, y)| (x as i64, y as i64))
            .collect();
        assert_eq!(got, brute_boundary(&a).into_iter().collect());
        for tol in [0.0, 1.0, 2.5, 5.0, 20.0] {
            let (f, r) = (boundary_f(&a, &b, tol).unwrap(), brute_boundary_f(&a, &b, tol));
            assert!((f - r).abs() <= 1e-9, "tol {tol}: {f} vs {r}");
        }
    }
}

#[test]
fn distance_transform_matches_nearest_pixel_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let m = random_mask(&mut rng);
        let Ok(field) = distance_transform(&m) else {
            assert!(m.is_blank());
            continue;
        };
        let set: Vec<(usize, usize)> = m.iter_set().collect();
        let (w, h) = m.dims();
        for y in 0..h {
            for x in 0..w {
                let best = set
                    .iter()
                    .map(|&(u, v)| (x as f64 - u as f64).powi(2) + (y as f64 - v as f64).powi(2))
                    .fold(f64::INFINITY, f64::min);
                assert!((field.sq(x, y) - best).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn components_match_union_find() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let m = random_mask(&mut rng);
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let got: BTreeSet<Vec<(usize, usize)>> = connected_components(&m, conn)
                .into_iter()
                .map(|r| {
                    let mut p = r.pixels;
                    p.sort_by_key(|&(x, y)| (y, x));
                    assert_eq!(r.area, p.len());
                    p
                })
                .collect();
            let mut want = brute_components(&m, conn);
            want = want
                .into_iter()
                .map(|mut p| {
                    p.sort_by_key(|&(x, y)| (y, x));
                    p
                })
                .collect();
            assert_eq!(got, want);
        }
    }
}

#[test]
fn erosion_matches_distance_to_background() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let m = random_mask(&mut rng);
        let (w, h) = m.dims();
        // background includes a ring outside the grid
        let bg: Vec<(i64, i64)> = (-1..=h as i64)
            .flat_map(|y| (-1..=w as i64).map(move |x| (x, y)))
            .filter(|&(x, y)| !m.get_signed(x, y))
            .collect();
        for r in [0.5, 1.0, 2.0, 3.3, 17.0] {
            let e = m.erode(r);
            for y in 0..h {
                for x in 0..w {
                    let d2 = bg
                        .iter()
                        .map(|&(u, v)| (x as i64 - u).pow(2) + (y as i64 - v).pow(2))
                        .min()
                        .unwrap() as f64;
                    assert_eq!(e.get(x, y), m.get(x, y) && d2 > r * r, "r {r} at ({x},{y})");
                }
            }
        }
    }
}
