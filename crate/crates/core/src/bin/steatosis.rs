use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use steatosis::error::{Error, Result};
use steatosis::phantom::{evaluate, generate_phantom, read_ground_truth, write_phantom, PhantomSpec, DEFAULT_IOU_THRESHOLD};
use steatosis::pipeline::{analyze, PipelineConfig, REPORT_JSON};
use steatosis::report::{read_report, to_json_string};

/// Liver steatosis quantification on whole-slide image pyramids.
#[derive(Parser)]
#[command(name = "steatosis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze a slide pyramid and write report.json, report.csv and overlays.
    Analyze(AnalyzeArgs),
    /// Generate a synthetic slide with ground truth.
    Phantom(PhantomArgs),
    /// Score a report against phantom ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Pyramid directory.
    slide: Option<PathBuf>,
    /// TOML pipeline configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    debug_dir: Option<PathBuf>,
    /// Treat dark rather than bright regions as steatosis.
    #[arg(long)]
    invert: bool,
    #[arg(long)]
    workers: Option<usize>,
    /// Skip overlap segregation; overlapped regions stay non-separable.
    #[arg(long)]
    no_segregation: bool,
    /// Print the effective configuration and exit.
    #[arg(long)]
    show_config: bool,
}

#[derive(Args)]
struct PhantomArgs {
    /// TOML phantom spec; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "phantom")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    isolated: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    canvas: Option<u32>,
    #[arg(long)]
    show_config: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// report.json or the analyze output directory.
    report: PathBuf,
    /// phantom.json or the phantom directory.
    truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    iou: f64,
    /// Write the metrics JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.detection.invert |= a.invert;
    if a.no_segregation {
        cfg.segregation.enabled = false;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    cfg.out_dir = Some(a.out.clone());
    if a.debug_dir.is_some() {
        cfg.debug_dir = a.debug_dir.clone();
    }
    cfg.validate()?;
    if a.show_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let slide = a.slide.ok_or_else(|| Error::Config("missing slide path".into()))?;
    let out = analyze(&slide, &cfg)?;
    let s = &out.report.summary;
    println!(
        "{}: {} tissue(s), {} instance(s) ({} isolated, {} split, {} non-separable), steatosis fraction {:.4}",
        out.report.slide_id,
        s.tissue_count,
        s.instance_count,
        s.isolated_count,
        s.split_success_count,
        s.nonseparable_count,
        s.steatosis_area_fraction
    );
    println!("report written to {}", a.out.display());
    Ok(())
}

fn run_phantom(a: PhantomArgs) -> Result<()> {
    let mut spec: PhantomSpec = match &a.config {
        Some(p) => read_toml(p)?,
        None => PhantomSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.rng_seed = s;
    }
    if let Some(n) = a.isolated {
        spec.n_isolated = n;
    }
    if let Some(n) = a.pairs {
        spec.n_overlap_pairs = n;
    }
    if let Some(n) = a.canvas {
        spec.canvas_size = n;
    }
    spec.validate()?;
    if a.show_config {
        print!("{}", toml::to_string(&spec).expect("spec serializes"));
        return Ok(());
    }
    let (pyramid, gt) = generate_phantom(&spec)?;
    write_phantom(&pyramid, &gt, &a.out)?;
    println!(
        "phantom {} (seed {}): {} isolated, {} pairs written to {}",
        gt.slide_id,
        spec.rng_seed,
        gt.isolated().count(),
        gt.pairs.len(),
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let report_path = if a.report.is_dir() { a.report.join(REPORT_JSON) } else { a.report.clone() };
    let report = read_report(&report_path)?;
    let gt = read_ground_truth(&a.truth)?;
    let metrics = evaluate(&report, &gt, a.iou)?;
    let json = to_json_string(&metrics)?;
    match &a.out {
        Some(p) => {
            print!("{}", metrics.table());
            std::fs::write(p, json)?;
        }
        None => print!("{}{json}", metrics.table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::Phantom(a) => run_phantom(a),
        Command::Eval(a) => run_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
