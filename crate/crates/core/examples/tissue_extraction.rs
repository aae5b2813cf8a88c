//! Detects the tissue on a synthetic slide, estimates its orientation and
//! cuts out a rotated, background-minimal level-0 image.

use steatosis::phantom::{generate_phantom, PhantomSpec};
use steatosis::pipeline::tissue_support;
use steatosis::tissue::{detect_tissues, extract_component, DEFAULT_FILL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PhantomSpec { canvas_size: 1024, theta_true: 0.6, n_isolated: 20, n_overlap_pairs: 4, ..Default::default() };
    let (slide, _) = generate_phantom(&spec)?;

    let (components, thr) = detect_tissues(&slide, 4, 500)?;
    println!("otsu threshold {thr:.4}, {} component(s)", components.len());

    for (k, comp) in components.into_iter().enumerate() {
        let bbox = comp.bbox_l0;
        let t = extract_component(&slide, k, comp, DEFAULT_FILL, thr)?;
        let support = tissue_support(&t);
        let (w, h) = (t.image.width(), t.image.height());
        println!(
            "tissue {k}: angle {:.4} rad (true {:.4}), L0 box {}x{}, rotated {}x{}",
            t.transform.angle, spec.theta_true, bbox.width, bbox.height, w, h
        );
        println!(
            "  background: axis-aligned {:.3}, rotated {:.3}",
            1.0 - support.count() as f64 / (bbox.width as f64 * bbox.height as f64),
            1.0 - support.count() as f64 / (w as f64 * h as f64),
        );
        let (gx, gy) = t.transform.rotated_to_global_xy(w as f64 / 2.0, h as f64 / 2.0);
        println!("  rotated center maps to global ({gx:.1}, {gy:.1})");
    }
    Ok(())
}
