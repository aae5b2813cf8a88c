//! Convex hulls of integer point sets.

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Monotone-chain convex hull, counter-clockwise in raw coordinates, with
/// collinear points dropped. Degenerate inputs return 1 or 2 vertices.
pub fn convex_hull(points: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(vertices: &[(i64, i64)]) -> f64 {
    crate::contour::signed_area(vertices).abs()
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Number of lattice points inside or on the hull polygon, via Pick's theorem
/// `I + B = A + B/2 + 1`. Works for degenerate (point or segment) hulls too.
pub fn lattice_points_in_hull(hull: &[(i64, i64)]) -> u64 {
    match hull.len() {
        0 => 0,
        1 => 1,
        _ => {
            let n = hull.len();
            let boundary: i64 = (0..n)
                .map(|i| {
                    let (a, b) = (hull[i], hull[(i + 1) % n]);
                    gcd(b.0 - a.0, b.1 - a.1)
                })
                .sum();
            let twice_area = crate::contour::signed_area(hull).abs() * 2.0;
            // 2·(I + B) = 2A + B + 2
            ((twice_area.round() as i64 + boundary + 2) / 2) as u64
        }
    }
}
