use varcrit::pipeline::{execute, run, validate, BoundarySpec, DomainSpec, RunConfig, EXIT_NON_CONVERGENCE};
use varcrit::Error;

fn affine(h: f64) -> RunConfig {
    RunConfig {
        boundary: BoundarySpec::Affine { a: 0.5, b: -1.0, c: 0.25 },
        schedule: vec![4, 8],
        ..RunConfig::reference(h)
    }
}

#[test]
fn config_round_trips_through_json() {
    let cfg = RunConfig::reference(1.0 / 32.0);
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    let bad = text.replacen("\"seed\"", "\"sede\"", 1);
    assert!(matches!(RunConfig::from_json(&bad), Err(Error::Config(_))));
}

#[test]
fn validation_lists_each_violation() {
    assert!(validate(&RunConfig::reference(1.0 / 32.0)).is_empty());
    assert_eq!(validate(&RunConfig { h: 0.0, ..RunConfig::reference(0.1) }).len(), 1);
    assert_eq!(validate(&RunConfig { q: -1.0, ..RunConfig::reference(0.05) }).len(), 1);
    assert_eq!(validate(&RunConfig { schedule: vec![8, 4], ..RunConfig::reference(0.05) }).len(), 1);
    let rect_ref = RunConfig { domain: DomainSpec::Rect { a: 1.0, b: 1.0 }, ..RunConfig::reference(0.05) };
    assert_eq!(validate(&rect_ref).len(), 1);
    assert!(matches!(execute(&RunConfig { h: -1.0, ..RunConfig::reference(0.05) }), Err(Error::Config(_))));
}

#[test]
fn affine_run_has_zero_residuals_and_no_critical_points() {
    let out = execute(&affine(1.0 / 16.0)).unwrap();
    assert_eq!(out.report.status, "ok");
    assert_eq!(out.report.exit_code(), 0);
    let fd = out.report.final_diagnostics.as_ref().unwrap();
    assert!(fd.critical.candidates.is_empty());
    for (name, r) in &fd.residuals {
        assert!(*r < 1e-8, "{name}: {r}");
    }
    let slope = 0.5f64.hypot(1.0);
    for stage in &out.report.per_n {
        assert!((stage.sup_grad - slope).abs() < 1e-7, "n={}: {}", stage.n, stage.sup_grad);
        assert!(stage.stream_misfit.unwrap() < 1e-12);
    }
}

#[test]
fn coupling_value_decreases_along_the_schedule() {
    let out = execute(&RunConfig::reference(1.0 / 64.0)).unwrap();
    assert_eq!(out.report.status, "ok");
    let f: Vec<f64> = out.report.per_n.iter().map(|s| s.f_value.unwrap().abs()).collect();
    for w in f.windows(2) {
        assert!(w[1] < w[0], "{f:?}");
    }
    assert!(out.report.invariants.iter().all(|i| i.ok));
    let inc: Vec<f64> = out.report.per_n.iter().filter_map(|s| s.gradient_increment).collect();
    assert_eq!(inc.len(), out.report.per_n.len() - 1);
    assert!(out.report.per_n[0].gradient_increment.is_none());
    for w in inc.windows(2) {
        assert!(w[1] < w[0], "{inc:?}");
    }
}

#[test]
fn stalled_runs_report_non_convergence() {
    let mut cfg = RunConfig::reference(1.0 / 32.0);
    cfg.boundary = BoundarySpec::RandomFourier { modes: 4, amplitude: 0.5 };
    cfg.seed = 3;
    cfg.max_iter = 20;
    let strict = execute(&cfg).unwrap();
    assert_eq!(strict.report.status, "non_convergence");
    assert_eq!(strict.report.exit_code(), EXIT_NON_CONVERGENCE);
    assert!(strict.report.final_diagnostics.is_none());
    assert!(strict.report.per_n.len() < cfg.schedule.len());

    cfg.continue_on_stall = true;
    let swept = execute(&cfg).unwrap();
    assert_eq!(swept.report.status, "non_convergence");
    assert_eq!(swept.report.per_n.len(), cfg.schedule.len());
    let fd = swept.report.final_diagnostics.as_ref().unwrap();
    assert!(fd.critical.isolated.is_empty());
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output_dir: dir.path().join("out"), ..affine(1.0 / 16.0) };
    let report = run(&cfg).unwrap();
    assert_eq!(report.status, "ok");
    for name in ["u.csv", "v.csv", "report.json"] {
        assert!(cfg.output_dir.join(name).exists(), "{name}");
    }
    let text = std::fs::read_to_string(cfg.output_dir.join("report.json")).unwrap();
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(json["schema"], "varcrit.run/1");
}
