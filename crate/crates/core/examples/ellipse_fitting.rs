//! Fitting ellipses to noisy arcs.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steatosis::ellipse::{fit_ellipse, fit_ellipse_algebraic, EllipseParams};

fn main() {
    let truth = EllipseParams::new(100.0, 80.0, 30.0, 18.0, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for span in [2.0 * PI, PI, PI / 2.0] {
        let pts: Vec<(f64, f64)> = (0..60)
            .map(|i| {
                let (x, y) = truth.point_at(span * i as f64 / 60.0);
                (x + rng.random_range(-0.5..0.5), y + rng.random_range(-0.5..0.5))
            })
            .collect();
        let show = |name: &str, e: Result<EllipseParams, _>| match e {
            Ok(e) => println!("  {name:<9} c=({:.2}, {:.2}) a={:.2} b={:.2} phi={:.3}", e.cx, e.cy, e.a, e.b, e.phi),
            Err(err) => println!("  {name:<9} failed: {err}"),
        };
        println!("arc of {:.0} degrees", span.to_degrees());
        show("direct", fit_ellipse_algebraic(&pts));
        show("refined", fit_ellipse(&pts));
    }
}
