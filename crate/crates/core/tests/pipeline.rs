use steatosis::phantom::{evaluate, generate_phantom, PhantomSpec};
use steatosis::pipeline::{analyze, run_pipeline, PipelineConfig, REPORT_CSV, REPORT_JSON};
use steatosis::report::{check_counting_identity, read_report, to_json_string, CsvReport, InstanceClass};
use steatosis::slide::write_pyramid;

fn standard() -> PhantomSpec {
    PhantomSpec {
        n_isolated: 50,
        n_overlap_pairs: 10,
        rng_seed: 42,
        ..Default::default()
    }
}

#[test]
fn standard_phantom_end_to_end() {
    let (p, gt) = generate_phantom(&standard()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_pyramid(&p, dir.path().join("slide"), &[0, 1, 2, 3, 4]).unwrap();
    let out_dir = dir.path().join("out");
    let cfg = PipelineConfig { out_dir: Some(out_dir.clone()), ..Default::default() };
    let out = analyze(dir.path().join("slide"), &cfg).unwrap();
    check_counting_identity(&out.report).unwrap();
    assert_eq!(out.report.tissues.len(), 1);

    let from_disk = read_report(out_dir.join(REPORT_JSON)).unwrap();
    assert_eq!(to_json_string(&from_disk).unwrap(), to_json_string(&out.report).unwrap());
    let csv = CsvReport::parse(&std::fs::read_to_string(out_dir.join(REPORT_CSV)).unwrap()).unwrap();
    assert_eq!(csv.rows.len(), out.report.summary.instance_count);
    assert!(out_dir.join("overlay_tissue_0.png").exists());

    let m = evaluate(&out.report, &gt, 0.75).unwrap();
    assert_eq!(m.isolated_accuracy, Some(1.0));
    assert_eq!(m.pairs_total, 10);
    assert_eq!(m.pairs_correct, out.report.summary.split_success_count);
}

#[test]
fn steatosis_fraction_matches_ground_truth() {
    let spec = PhantomSpec {
        canvas_size: 1024,
        tissue_shape: steatosis::phantom::TissueShape::Ellipse,
        tissue_axes: [0.3, 0.3],
        n_isolated: 48,
        n_overlap_pairs: 0,
        radius_range: [26.0, 30.0],
        isolated_max_aspect: 1.0,
        edge_margin: 6.0,
        min_separation: 6.0,
        max_tries: 20000,
        rng_seed: 4,
        ..Default::default()
    };
    let (p, gt) = generate_phantom(&spec).unwrap();
    let tissue = gt.tissue_mask();
    let fat = gt.steatosis_mask();
    let truth = fat.foreground().filter(|&(x, y)| tissue.get(x, y)).count() as f64 / tissue.count() as f64;
    assert!((0.38..=0.42).contains(&truth), "phantom fraction {truth}");
    let cfg = PipelineConfig { min_tissue_area: 500, ..Default::default() };
    let out = run_pipeline(&p, &cfg).unwrap();
    let got = out.report.summary.steatosis_area_fraction;
    assert!((got - truth).abs() <= 0.02, "{got} vs {truth}");
}

#[test]
fn disabled_segregation_scores_zero_pairs() {
    let (p, gt) = generate_phantom(&standard()).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.segregation.enabled = false;
    let out = run_pipeline(&p, &cfg).unwrap();
    assert_eq!(out.report.summary.split_success_count, 0);
    assert_eq!(out.report.summary.nonseparable_count, out.report.summary.overlapped_count);
    let m = evaluate(&out.report, &gt, 0.75).unwrap();
    assert_eq!(m.overlap_split_accuracy, Some(0.0));
}

#[test]
fn accepted_splits_reclassify_as_isolated() {
    let spec = PhantomSpec {
        n_isolated: 0,
        n_overlap_pairs: 100,
        rng_seed: 1,
        ..Default::default()
    };
    let (p, _) = generate_phantom(&spec).unwrap();
    let out = run_pipeline(&p, &PipelineConfig::default()).unwrap();
    let split: Vec<_> = out.report.regions.iter().filter(|r| r.class == InstanceClass::Split).collect();
    assert!(split.len() >= 20);
    let consistent = split.iter().filter(|r| r.solidity > 0.95).count();
    assert!(consistent as f64 >= 0.9 * split.len() as f64, "{consistent}/{}", split.len());
}

#[test]
fn debug_outputs_follow_stage_order() {
    let spec = PhantomSpec { canvas_size: 1024, n_isolated: 10, n_overlap_pairs: 3, rng_seed: 5, ..Default::default() };
    let (p, _) = generate_phantom(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_pyramid(&p, dir.path().join("slide"), &[0]).unwrap();
    let debug = dir.path().join("debug");
    let cfg = PipelineConfig { debug_dir: Some(debug.clone()), min_tissue_area: 500, ..Default::default() };
    let out = analyze(dir.path().join("slide"), &cfg).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(&debug)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let stages = ["01_L4_mask", "tissue_0_02_L4_box", "tissue_0_03_L0_crop", "tissue_0_04_L0_rotated"];
    for (name, stage) in names.iter().zip(stages) {
        assert!(name.starts_with(stage), "{names:?}");
    }
    let splits = names.iter().filter(|n| n.ends_with("_split.png")).count();
    assert_eq!(splits, out.report.summary.overlapped_count);
}
