//! Ellipse fitting.
//!
//! [`fit_ellipse`] starts from the direct least-squares conic fit constrained
//! to `4AC - B² > 0` and then refines the geometric parameters by minimizing
//! orthogonal distances, which removes the shrinkage bias of the algebraic
//! fit on noisy data.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix5, Vector3, Vector5, SVD};
use serde::{Deserialize, Serialize};

use crate::error::SegregationError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub cx: f64,
    pub cy: f64,
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis.
    pub b: f64,
    /// Angle of the major axis to +x, in `(-π/2, π/2]`.
    pub phi: f64,
}

pub(crate) fn normalize_half_turn(mut a: f64) -> f64 {
    while a > PI / 2.0 {
        a -= PI;
    }
    while a <= -PI / 2.0 {
        a += PI;
    }
    a
}

impl EllipseParams {
    /// Canonical form: swaps axes if needed so `a ≥ b`, normalizes `phi`.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, phi: f64) -> Self {
        let (a, b, phi) = if b > a { (b, a, phi + PI / 2.0) } else { (a, b, phi) };
        Self {
            cx,
            cy,
            a: a.abs(),
            b: b.abs(),
            phi: normalize_half_turn(phi),
        }
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self::new(cx, cy, r, r, 0.0)
    }

    /// Coordinates in the ellipse's own axes.
    #[inline]
    pub fn to_axes(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.to_axes(x, y);
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.phi.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (self.cx + c * u - s * v, self.cy + s * u + c * v)
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Inclusive integer bounds `(x0, y0, x1, y1)` of the ellipse.
    pub fn pixel_bounds(&self) -> (i64, i64, i64, i64) {
        let (s, c) = self.phi.sin_cos();
        let hx = ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let hy = ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (
            (self.cx - hx).floor() as i64,
            (self.cy - hy).floor() as i64,
            (self.cx + hx).ceil() as i64,
            (self.cy + hy).ceil() as i64,
        )
    }

    /// Pixels whose centers lie inside the ellipse.
    pub fn rasterize(&self) -> Vec<(i64, i64)> {
        let (x0, y0, x1, y1) = self.pixel_bounds();
        let mut out = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f64, y as f64) {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Parameter of the point on the ellipse closest to `(x, y)`.
    fn closest_parameter(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.to_axes(x, y);
        let (a, b) = (self.a, self.b);
        let mut t = (a * v).atan2(b * u);
        for _ in 0..12 {
            let (s, c) = t.sin_cos();
            let g = (b * b - a * a) * s * c + a * u * s - b * v * c;
            let dg = (b * b - a * a) * (c * c - s * s) + a * u * c + b * v * s;
            if dg.abs() < 1e-12 {
                break;
            }
            let step = g / dg;
            t -= step.clamp(-0.5, 0.5);
            if step.abs() < 1e-12 {
                break;
            }
        }
        t
    }
}

/// Algebraic conic `A x² + B xy + C y² + D x + E y + F = 0` to geometric form.
fn conic_to_params(q: [f64; 6]) -> Option<EllipseParams> {
    let [a, b, c, d, e, f] = q;
    let det = 4.0 * a * c - b * b;
    if det <= 0.0 || !det.is_finite() {
        return None;
    }
    let x0 = (b * e - 2.0 * c * d) / det;
    let y0 = (b * d - 2.0 * a * e) / det;
    let f0 = a * x0 * x0 + b * x0 * y0 + c * y0 * y0 + d * x0 + e * y0 + f;
    let mean = (a + c) / 2.0;
    let r = (((a - c) / 2.0).powi(2) + (b / 2.0).powi(2)).sqrt();
    let (l_small, l_big) = (mean - r, mean + r);
    let (sa, sb) = (-f0 / l_small, -f0 / l_big);
    if sa <= 0.0 || sb <= 0.0 || !sa.is_finite() || !sb.is_finite() {
        return None;
    }
    // eigenvector of the smaller eigenvalue gives the major axis
    let phi = if r < 1e-15 * mean.abs().max(1e-300) {
        0.0
    } else {
        let theta = 0.5 * b.atan2(a - c);
        // theta diagonalizes the form; its direction has eigenvalue mean + r
        theta + PI / 2.0
    };
    Some(EllipseParams::new(x0, y0, sa.sqrt(), sb.sqrt(), phi))
}

/// Direct least-squares ellipse fit in normalized coordinates.
pub fn fit_ellipse_algebraic(points: &[(f64, f64)]) -> Result<EllipseParams, SegregationError> {
    if points.len() < 5 {
        return Err(SegregationError::TooFewPoints {
            needed: 5,
            got: points.len(),
        });
    }
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (mx / n, my / n);
    let spread = (points
        .iter()
        .map(|p| (p.0 - mx).powi(2) + (p.1 - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if spread < 1e-9 {
        return Err(SegregationError::DegenerateConic);
    }
    let s = spread / 2f64.sqrt();
    let pts: Vec<(f64, f64)> = points.iter().map(|p| ((p.0 - mx) / s, (p.1 - my) / s)).collect();

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(x, y) in &pts {
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    let s3_inv = s3.try_inverse().ok_or(SegregationError::DegenerateConic)?;
    let t = -s3_inv * s2.transpose();
    let m = s1 + s2 * t;
    // premultiply by the inverse of the constraint matrix [[0,0,2],[0,-1,0],[2,0,0]]
    let m = Matrix3::from_rows(&[
        m.row(2) / 2.0,
        -m.row(1),
        m.row(0) / 2.0,
    ]);
    let eigen = m.complex_eigenvalues();
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lam in eigen.iter() {
        if lam.im.abs() > 1e-9 * lam.re.abs().max(1.0) {
            continue;
        }
        let shifted = m - Matrix3::identity() * lam.re;
        let svd = SVD::new(shifted, false, true);
        let v_t = svd.v_t.ok_or(SegregationError::DegenerateConic)?;
        let k = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(2);
        let v: Vector3<f64> = v_t.row(k).transpose();
        let cond = 4.0 * v[0] * v[2] - v[1] * v[1];
        if cond > 0.0 {
            let score = cond / v.norm_squared();
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, v));
            }
        }
    }
    let (_, a1) = best.ok_or(SegregationError::DegenerateConic)?;
    let a2 = t * a1;
    let e = conic_to_params([a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]])
        .ok_or(SegregationError::DegenerateConic)?;
    Ok(EllipseParams::new(
        e.cx * s + mx,
        e.cy * s + my,
        e.a * s,
        e.b * s,
        e.phi,
    ))
}

fn sum_sq_distance(e: &EllipseParams, points: &[(f64, f64)]) -> f64 {
    points
        .iter()
        .map(|&(x, y)| {
            let t = e.closest_parameter(x, y);
            let (px, py) = e.point_at(t);
            (px - x).powi(2) + (py - y).powi(2)
        })
        .sum()
}

/// Levenberg-Marquardt on orthogonal distances, over `(cx, cy, a, b, φ)`.
fn refine_geometric(init: EllipseParams, points: &[(f64, f64)]) -> EllipseParams {
    let mut e = init;
    let mut cost = sum_sq_distance(&e, points);
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jtj = Matrix5::<f64>::zeros();
        let mut jtr = Vector5::<f64>::zeros();
        let (s, c) = e.phi.sin_cos();
        for &(x, y) in points {
            let t = e.closest_parameter(x, y);
            let (st, ct) = t.sin_cos();
            let (px, py) = e.point_at(t);
            let (rx, ry) = (x - px, y - py);
            // outward normal at the foot point
            let (nu, nv) = (e.b * ct, e.a * st);
            let norm = (nu * nu + nv * nv).sqrt().max(1e-12);
            let (nx, ny) = ((c * nu - s * nv) / norm, (s * nu + c * nv) / norm);
            let r = rx * nx + ry * ny;
            // derivative of the foot point along the normal per parameter
            let du = e.a * ct;
            let dv = e.b * st;
            let jac = Vector5::new(
                -nx,
                -ny,
                -(c * ct * nx + s * ct * ny),
                -(-s * st * nx + c * st * ny),
                -((-s * du - c * dv) * nx + (c * du - s * dv) * ny),
            );
            jtj += jac * jac.transpose();
            jtr += jac * r;
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut damped = jtj;
            for k in 0..5 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-9);
            }
            let Some(step) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = EllipseParams {
                cx: e.cx + step[0],
                cy: e.cy + step[1],
                a: e.a + step[2],
                b: e.b + step[3],
                phi: e.phi + step[4],
            };
            if !(cand.a > 0.0 && cand.b > 0.0 && cand.a.is_finite() && cand.b.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let new_cost = sum_sq_distance(&cand, points);
            if new_cost < cost {
                let done = (cost - new_cost) < 1e-12 * cost.max(1e-12);
                e = cand;
                cost = new_cost;
                lambda = (lambda / 10.0).max(1e-9);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    EllipseParams::new(e.cx, e.cy, e.a, e.b, e.phi)
}

/// Fits an ellipse to at least 5 boundary points.
pub fn fit_ellipse(points: &[(f64, f64)]) -> Result<EllipseParams, SegregationError> {
    let init = fit_ellipse_algebraic(points)?;
    let refined = refine_geometric(init, points);
    // refinement must stay a bounded ellipse near the data
    let extent = points
        .iter()
        .map(|p| (p.0 - init.cx).hypot(p.1 - init.cy))
        .fold(0.0, f64::max);
    if refined.a.is_finite() && refined.b > 1e-6 && refined.a <= 4.0 * extent.max(init.a) {
        Ok(refined)
    } else {
        Ok(init)
    }
}
