//! Splits two overlapping discs with the curvature and ellipse-fit search.

use steatosis::contour::trace_boundary;
use steatosis::ellipse::EllipseParams;
use steatosis::region::PixelRegion;
use steatosis::segregation::{segregate, SegregationOutcome, SegregationParams};

fn main() {
    let a = EllipseParams::circle(40.0, 40.0, 20.0).rasterize();
    let b = EllipseParams::new(70.0, 44.0, 22.0, 17.0, 0.4).rasterize();
    let region = PixelRegion::from_pixels(&[a, b].concat());
    let contour = trace_boundary(&region);
    println!("merged area {}, contour length {}", region.area(), contour.points.len());

    let res = segregate(&region, &contour, &SegregationParams::default());
    for p in &res.points {
        println!("concave point at ({:.0}, {:.0}) kappa {:.3}", p.x, p.y, p.kappa);
    }
    println!("{} candidate cuts scored", res.candidates.len());

    match res.outcome {
        SegregationOutcome::Split { a, b, chosen } => {
            println!("split along {:?} - {:?}, F = {:.3}", chosen.p_i, chosen.p_j, chosen.f);
            println!("  part areas {} and {}", a.area(), b.area());
            for e in [chosen.ellipse_a, chosen.ellipse_b] {
                println!("  ellipse c=({:.1}, {:.1}) a={:.1} b={:.1}", e.cx, e.cy, e.a, e.b);
            }
        }
        SegregationOutcome::NonSeparable { best_f } => println!("not separable, best F {best_f:.3}"),
    }
}
