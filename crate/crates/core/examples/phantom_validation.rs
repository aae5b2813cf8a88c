//! Generates a phantom, runs the pipeline on it and scores the result.

use steatosis::phantom::{evaluate, generate_phantom, PhantomSpec, DEFAULT_IOU_THRESHOLD};
use steatosis::pipeline::{run_pipeline, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let spec = PhantomSpec { rng_seed: seed, ..Default::default() };
    let (slide, truth) = generate_phantom(&spec)?;
    println!(
        "phantom {}: {} instances, {} pairs",
        truth.slide_id,
        truth.instances.len(),
        truth.pairs.len()
    );

    let out = run_pipeline(&slide, &PipelineConfig::default())?;
    let metrics = evaluate(&out.report, &truth, DEFAULT_IOU_THRESHOLD)?;
    println!("{}", metrics.table());
    for d in &metrics.pair_diagnostics {
        println!("pair {:>2}: {:?}", d.pair_id, d.outcome);
    }
    Ok(())
}
