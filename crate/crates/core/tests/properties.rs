use std::f64::consts::PI;

use proptest::prelude::*;

use steatosis::contour::trace_boundary;
use steatosis::detection::{
    classify_region, compute_shape_features, hysteresis_binarize, Classification, DetectionParams, RejectReason,
    ShapeFeatures,
};
use steatosis::ellipse::EllipseParams;
use steatosis::phantom::{evaluate, generate_phantom, PhantomSpec};
use steatosis::pipeline::{run_pipeline, PipelineConfig};
use steatosis::raster::{BinaryMask, GrayRaster};
use steatosis::region::PixelRegion;
use steatosis::segregation::{fit_quality, segregate, SegregationOutcome, SegregationParams};
use steatosis::slide::{global_from_local, local_from_global, map_level_coords, Point2};
use steatosis::tissue::estimate_rotation;

fn ellipse_region(e: &EllipseParams) -> PixelRegion {
    PixelRegion::from_pixels(&e.rasterize())
}

fn features(r: &PixelRegion) -> ShapeFeatures {
    compute_shape_features(r, &trace_boundary(r)).unwrap()
}

fn gray(w: u32, h: u32, data: &[f32]) -> GrayRaster {
    GrayRaster::from_vec(w, h, data.to_vec()).unwrap()
}

fn gray_strategy() -> impl Strategy<Value = (u32, u32, Vec<f32>)> {
    (4u32..24, 4u32..24).prop_flat_map(|(w, h)| {
        (Just(w), Just(h), prop::collection::vec(0.0f32..=1.0, (w * h) as usize))
    })
}

fn rect_mask(w: u32, h: u32, cx: f64, cy: f64, len: f64, wid: f64, angle: f64) -> BinaryMask {
    let (s, c) = angle.sin_cos();
    BinaryMask::from_fn(w, h, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        (c * dx + s * dy).abs() <= len / 2.0 && (-s * dx + c * dy).abs() <= wid / 2.0
    })
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn level_mapping_is_invertible(x in -1e6f64..1e6, y in -1e6f64..1e6, from in 0u32..8, to in 0u32..8) {
        let p = Point2::global(x, y, from);
        let back = map_level_coords(map_level_coords(p, from, to).unwrap(), to, from).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn local_global_compose_to_identity(
        x in -5e3f64..5e3, y in -5e3f64..5e3,
        cx in 0f64..1e5, cy in 0f64..1e5,
        w in 1f64..4e3, h in 1f64..4e3,
    ) {
        let c = Point2::global(cx, cy, 0);
        let l = Point2::local(x, y);
        let back = local_from_global(global_from_local(l, c, w, h).unwrap(), c, w, h).unwrap();
        prop_assert!((back.x - x).abs() < 1e-9 && (back.y - y).abs() < 1e-9);
    }

    #[test]
    fn rotation_is_translation_invariant(angle in -1.5f64..1.5, tx in 0u32..30, ty in 0u32..30) {
        let a = estimate_rotation(&rect_mask(160, 160, 60.0, 60.0, 70.0, 24.0, angle), 4).unwrap();
        let b = estimate_rotation(
            &rect_mask(160, 160, 60.0 + tx as f64, 60.0 + ty as f64, 70.0, 24.0, angle),
            4,
        )
        .unwrap();
        prop_assert!(angle_gap(a.angle, b.angle) < 0.5f64.to_radians());
    }

    #[test]
    fn rotation_survives_upsampling(angle in -1.5f64..1.5) {
        let small = rect_mask(120, 120, 60.0, 60.0, 70.0, 24.0, angle);
        let big = BinaryMask::from_fn(240, 240, |x, y| small.get(x / 2, y / 2));
        let a = estimate_rotation(&small, 4).unwrap();
        let b = estimate_rotation(&big, 4).unwrap();
        prop_assert!(angle_gap(a.angle, b.angle) < 0.5f64.to_radians());
    }

    #[test]
    fn equal_hysteresis_thresholds_are_plain_thresholding((w, h, data) in gray_strategy(), t in 0.0f64..=1.0) {
        let img = gray(w, h, &data);
        let m = hysteresis_binarize(&img, t, t);
        for y in 0..h {
            for x in 0..w {
                prop_assert_eq!(m.get(x, y), img.get(x, y) as f64 >= t);
            }
        }
    }

    #[test]
    fn hysteresis_low_is_monotone((w, h, data) in gray_strategy(), lo in 0.0f64..0.5, d in 0.0f64..0.3) {
        let img = gray(w, h, &data);
        let loose = hysteresis_binarize(&img, lo, 0.8);
        let tight = hysteresis_binarize(&img, (lo + d).min(0.8), 0.8);
        for y in 0..h {
            for x in 0..w {
                prop_assert!(!tight.get(x, y) || loose.get(x, y));
            }
        }
    }

    #[test]
    fn features_are_scale_invariant(a in 10f64..30.0, ratio in 1.0f64..2.0, phi in 0.0f64..PI) {
        let e = EllipseParams::new(40.3, 40.6, a, a / ratio, phi);
        let e2 = EllipseParams::new(80.6, 81.2, 2.0 * a, 2.0 * a / ratio, phi);
        let (f1, f2) = (features(&ellipse_region(&e)), features(&ellipse_region(&e2)));
        for (u, v) in [
            (f1.inv_circularity, f2.inv_circularity),
            (f1.solidity, f2.solidity),
            (f1.extent, f2.extent),
        ] {
            prop_assert!((v / u - 1.0).abs() <= 0.05, "{} vs {}", u, v);
        }
    }

    #[test]
    fn classification_is_total(
        ic in prop_oneof![0.0f64..10.0, Just(3.0), Just(f64::NAN)],
        so in prop_oneof![0.0f64..=1.0, Just(0.95)],
        ex in prop_oneof![0.0f64..=1.0, Just(0.5)],
    ) {
        let p = DetectionParams::default();
        let f = ShapeFeatures { area: 10.0, perimeter: 10.0, inv_circularity: ic, solidity: so, extent: ex };
        let c = classify_region(&f, &p);
        prop_assert_eq!(c, classify_region(&f, &p));
        let expected = if ic > 3.0 {
            Classification::Rejected(RejectReason::NonCircular)
        } else if so > 0.95 {
            Classification::Isolated
        } else if ex < 0.5 {
            Classification::Rejected(RejectReason::LowExtent)
        } else {
            Classification::Overlapped
        };
        prop_assert_eq!(c, expected);
    }

    #[test]
    fn fit_quality_is_symmetric_and_bounded(
        a1 in 5f64..20.0, b1 in 5f64..20.0, p1 in 0.0f64..PI,
        a2 in 5f64..20.0, b2 in 5f64..20.0, p2 in 0.0f64..PI,
        dx in -15f64..15.0, dy in -15f64..15.0,
    ) {
        let e1 = EllipseParams::new(50.0, 50.0, a1, b1, p1);
        let e2 = EllipseParams::new(50.0 + dx, 50.0 + dy, a2, b2, p2);
        let f12 = fit_quality(&ellipse_region(&e1), &e2);
        let f21 = fit_quality(&ellipse_region(&e2), &e1);
        prop_assert!((f12 - f21).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&f12));
        prop_assert!((fit_quality(&ellipse_region(&e1), &e1) - 1.0).abs() < 1e-12);
    }
}

fn two_discs(r: f64, d: f64) -> PixelRegion {
    let c = 2.0 * r + 5.3;
    let a = EllipseParams::circle(c, c + 0.4, r).rasterize();
    let b = EllipseParams::circle(c + d, c + 0.4, r).rasterize();
    PixelRegion::from_pixels(&[a, b].concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn symmetric_discs_split_evenly(r in 12f64..25.0, t in 1.3f64..1.7) {
        let region = two_discs(r, t * r);
        let res = segregate(&region, &trace_boundary(&region), &SegregationParams::default());
        let SegregationOutcome::Split { a, b, .. } = res.outcome else {
            return Err(TestCaseError::fail("pair was not split"));
        };
        let (aa, ab) = (a.area() as f64, b.area() as f64);
        prop_assert!((aa - ab).abs() / aa.max(ab) < 0.10, "{} vs {}", aa, ab);
    }

    #[test]
    fn segregation_is_rotation_equivariant(r in 12f64..22.0, t in 1.3f64..1.7) {
        let region = two_discs(r, t * r);
        let h = region.bbox().3 + 1;
        let rot = |(x, y): (i64, i64)| (h - 1 - y, x);
        let rotated = PixelRegion::from_pixels(&region.pixels().map(rot).collect::<Vec<_>>());
        let params = SegregationParams::default();
        let c0 = trace_boundary(&region);
        let c1 = trace_boundary(&rotated);
        let s0 = segregate(&region, &c0, &params);
        let s1 = segregate(&rotated, &c1, &params);
        prop_assert_eq!(s0.is_split(), s1.is_split());
        if let (SegregationOutcome::Split { chosen: k0, .. }, SegregationOutcome::Split { chosen: k1, .. }) =
            (&s0.outcome, &s1.outcome)
        {
            let n = c1.points.len();
            let index_of = |p: (i64, i64)| {
                (0..n)
                    .min_by(|&i, &j| {
                        let d = |k: usize| (c1.points[k].0 - p.0).pow(2) + (c1.points[k].1 - p.1).pow(2);
                        d(i).cmp(&d(j))
                    })
                    .unwrap()
            };
            let cyc = |i: usize, j: usize| { let d = i.abs_diff(j); d.min(n - d) };
            let mapped = [index_of(rot(k0.p_i)), index_of(rot(k0.p_j))];
            let got = [index_of(k1.p_i), index_of(k1.p_j)];
            let direct = cyc(mapped[0], got[0]).max(cyc(mapped[1], got[1]));
            let crossed = cyc(mapped[0], got[1]).max(cyc(mapped[1], got[0]));
            prop_assert!(direct.min(crossed) <= params.merge_gap, "{} {}", direct, crossed);
        }
    }
}

#[test]
fn evaluation_ignores_region_ids() {
    let spec = PhantomSpec {
        canvas_size: 1024,
        n_isolated: 30,
        n_overlap_pairs: 15,
        radius_range: [8.0, 20.0],
        rng_seed: 9,
        ..Default::default()
    };
    let (p, gt) = generate_phantom(&spec).unwrap();
    let out = run_pipeline(&p, &PipelineConfig::default()).unwrap();
    let base = evaluate(&out.report, &gt, 0.75).unwrap();
    let mut shuffled = out.report.clone();
    let n = shuffled.regions.len();
    let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
    for (r, &new_id) in shuffled.regions.iter_mut().zip(&perm) {
        r.region_id = new_id;
        r.split_partner_id = r.split_partner_id.map(|q| perm[q]);
    }
    shuffled.regions.reverse();
    let m = evaluate(&shuffled, &gt, 0.75).unwrap();
    assert_eq!(m.isolated_accuracy, base.isolated_accuracy);
    assert_eq!(m.overlap_split_accuracy, base.overlap_split_accuracy);
    assert_eq!((m.matched, m.missed, m.spurious, m.spurious_splits), (base.matched, base.missed, base.spurious, base.spurious_splits));
    let ious = |m: &steatosis::phantom::EvalMetrics| m.matches.iter().map(|x| (x.gt_id, x.iou, x.class)).collect::<Vec<_>>();
    assert_eq!(ious(&m), ious(&base));
}
