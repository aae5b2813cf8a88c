//! End to end: write a slide to disk, analyze it and save the report,
//! CSV and overlays.
//!
//! ```text
//! cargo run --release --example full_pipeline -- /tmp/steatosis-demo
//! ```

use std::path::PathBuf;

use steatosis::phantom::{generate_phantom, write_phantom, PhantomSpec};
use steatosis::pipeline::{analyze, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("steatosis-demo"));
    let slide_dir = root.join("slide");
    let (slide, truth) = generate_phantom(&PhantomSpec { canvas_size: 1536, n_isolated: 30, n_overlap_pairs: 6, ..Default::default() })?;
    write_phantom(&slide, &truth, &slide_dir)?;

    let cfg = PipelineConfig {
        out_dir: Some(root.join("out")),
        debug_dir: Some(root.join("debug")),
        min_tissue_area: 1000,
        ..Default::default()
    };
    let out = analyze(&slide_dir, &cfg)?;

    let s = &out.report.summary;
    println!("tissues           {}", out.report.tissues.len());
    println!("instances         {}", s.instance_count);
    println!("isolated          {}", s.isolated_count);
    println!("overlapped        {}", s.overlapped_count);
    println!("split             {}", s.split_success_count);
    println!("steatosis area    {:.2}%", 100.0 * s.steatosis_area_fraction);
    println!("outputs in {}", root.display());
    Ok(())
}
