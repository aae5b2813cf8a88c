//! Outer-boundary tracing of pixel regions.

use serde::{Deserialize, Serialize};

use crate::region::PixelRegion;

/// Neighbour directions, clockwise on screen (y grows downward).
const DIRS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter()
        .position(|&d| d == (dx, dy))
        .expect("offset is an 8-neighbour")
}

/// Closed 8-connected boundary chain, positively oriented
/// (positive shoelace area in raw `(x, y)` coordinates).
///
/// With y pointing down this is clockwise on screen, which is
/// counter-clockwise in the usual mathematical orientation, so convex arcs
/// have positive curvature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<(i64, i64)>,
    pub has_holes: bool,
    pub too_small: bool,
}

impl Contour {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Polygonal length with unit axial and `√2` diagonal steps.
    pub fn perimeter(&self) -> f64 {
        let n = self.points.len();
        if n < 2 {
            return 0.0;
        }
        (0..n)
            .map(|i| {
                let (ax, ay) = self.points[i];
                let (bx, by) = self.points[(i + 1) % n];
                (((bx - ax).pow(2) + (by - ay).pow(2)) as f64).sqrt()
            })
            .sum()
    }

    pub fn signed_area(&self) -> f64 {
        signed_area(&self.points)
    }

    pub fn as_f64(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|&(x, y)| (x as f64, y as f64)).collect()
    }
}

pub fn signed_area(points: &[(i64, i64)]) -> f64 {
    let n = points.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0i64;
    for i in 0..n {
        let (ax, ay) = points[i];
        let (bx, by) = points[(i + 1) % n];
        acc += ax * by - bx * ay;
    }
    acc as f64 / 2.0
}

/// Moore-neighbour tracing of the outer boundary with Jacob's stopping rule.
///
/// Pixels on one-pixel-wide parts are visited once per side, so a chain may
/// revisit such pixels. Interior holes are ignored and reported through
/// `has_holes`.
pub fn trace_boundary(region: &PixelRegion) -> Contour {
    let Some(start) = region.pixels().next() else {
        return Contour {
            points: Vec::new(),
            has_holes: false,
            too_small: true,
        };
    };
    let has_holes = region.has_holes();
    let mut points = vec![start];

    // The raster-order first pixel has background to its west.
    let first = next_boundary_step(region, start, 4);
    let Some((first_pixel, first_back)) = first else {
        return Contour {
            points,
            has_holes,
            too_small: true,
        };
    };

    let cap = 4 * region.area() + 16;
    let (mut p, mut back) = (first_pixel, first_back);
    while points.len() <= cap {
        if p == start {
            let (next, _) = next_boundary_step(region, p, back).expect("non-isolated pixel");
            if next == first_pixel {
                break;
            }
        }
        points.push(p);
        let (next, nb) = next_boundary_step(region, p, back).expect("non-isolated pixel");
        p = next;
        back = nb;
    }

    if signed_area(&points) < 0.0 {
        points[1..].reverse();
    }
    let too_small = points.len() < 3;
    Contour {
        points,
        has_holes,
        too_small,
    }
}

/// Scans clockwise around `p` starting after the background direction `back`.
/// Returns the next boundary pixel and the backtrack direction seen from it.
fn next_boundary_step(
    region: &PixelRegion,
    p: (i64, i64),
    back: usize,
) -> Option<((i64, i64), usize)> {
    let mut prev = back;
    for k in 1..=8 {
        let d = (back + k) % 8;
        let c = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
        if region.contains(c.0, c.1) {
            let b_abs = (p.0 + DIRS[prev].0, p.1 + DIRS[prev].1);
            return Some((c, dir_index(b_abs.0 - c.0, b_abs.1 - c.1)));
        }
        prev = d;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BinaryMask;

    fn disc(r: f64) -> PixelRegion {
        let n = (2.0 * r + 5.0) as u32;
        let c = n as f64 / 2.0 + 0.3;
        PixelRegion::from_mask(&BinaryMask::from_fn(n, n, |x, y| {
            (x as f64 - c).powi(2) + (y as f64 - c).powi(2) <= r * r
        }))
    }

    #[test]
    fn square_three_by_three() {
        let r = PixelRegion::from_mask(&BinaryMask::from_fn(3, 3, |_, _| true));
        let c = trace_boundary(&r);
        assert_eq!(c.len(), 8);
        assert!(!c.too_small);
        assert!(c.signed_area() > 0.0);
        let mut uniq = c.points.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
    }

    #[test]
    fn single_pixel_is_degenerate() {
        let r = PixelRegion::from_pixels(&[(4, 7)]);
        let c = trace_boundary(&r);
        assert_eq!(c.points, vec![(4, 7)]);
        assert!(c.too_small);
    }

    #[test]
    fn disc_chain_length_matches_boundary_count() {
        let r = disc(10.0);
        let c = trace_boundary(&r);
        let n = c.len() as f64;
        let two_pi_r = 2.0 * std::f64::consts::PI * 10.0;
        assert!(n >= two_pi_r * 0.85 && n <= two_pi_r * 1.15, "chain length {n}");
        // every 4-boundary pixel visited exactly once on a disc
        assert_eq!(c.len(), r.boundary_pixels().len());
    }

    #[test]
    fn chain_is_eight_connected_and_closed() {
        let r = disc(7.0);
        let c = trace_boundary(&r);
        for i in 0..c.len() {
            let (a, b) = (c.points[i], c.points[(i + 1) % c.len()]);
            assert!((a.0 - b.0).abs() <= 1 && (a.1 - b.1).abs() <= 1 && a != b);
        }
    }

    #[test]
    fn holes_are_flagged() {
        let ring = PixelRegion::from_mask(&BinaryMask::from_fn(7, 7, |x, y| {
            !(2..=4).contains(&x) || !(2..=4).contains(&y)
        }));
        let c = trace_boundary(&ring);
        assert!(c.has_holes);
        assert_eq!(c.len(), 24);
    }

    #[test]
    fn thin_line_is_traced_both_ways() {
        let r = PixelRegion::from_pixels(&[(0, 0), (1, 0), (2, 0)]);
        let c = trace_boundary(&r);
        assert_eq!(c.points, vec![(0, 0), (1, 0), (2, 0), (1, 0)]);
        assert!((c.perimeter() - 4.0).abs() < 1e-12);
    }
}
