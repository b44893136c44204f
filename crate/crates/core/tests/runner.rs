use diffhedge::runner::{run, verify_outputs, Command, RunConfig, RunManifest};

fn small(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.apply_text("run.paths=300\nrun.test_paths=400\ntrain.epochs=3\ntrain.batch_size=64\n").unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

#[test]
fn manifest_echoes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.set("method", "lsmc_poly").unwrap();
    let m = run(Command::Train, &cfg).unwrap();
    assert_eq!(m.status, "ok");
    let mut back = RunConfig::default();
    for (k, v) in &m.config {
        back.set(k, v).unwrap();
    }
    assert_eq!(back, cfg);
    assert_eq!(RunManifest::read(tmp.path()).unwrap(), m);
    let names: Vec<&str> = m.outputs.keys().map(String::as_str).collect();
    assert_eq!(names, ["curve.csv", "model.json", "training_set.csv"]);
    assert!(verify_outputs(tmp.path()).unwrap().is_empty());
}

#[test]
fn tampered_output_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path());
    run(Command::Simulate, &cfg).unwrap();
    std::fs::write(tmp.path().join("paths.csv"), "path_id\n").unwrap();
    assert_eq!(verify_outputs(tmp.path()).unwrap(), ["paths.csv"]);
}

#[test]
fn failed_stage_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.apply_text("run.method=lsmc_poly\nrun.paths=3\n").unwrap();
    assert!(run(Command::Train, &cfg).is_err());
    let m = RunManifest::read(tmp.path()).unwrap();
    assert_eq!(m.status, "error");
    assert!(m.error.unwrap().contains("lsmc_poly"));
}

#[test]
fn hedge_records_disjoint_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.set("method", "lsmc_nn").unwrap();
    let m = run(Command::Hedge, &cfg).unwrap();
    assert_eq!(m.train_test_disjoint, Some(true));
    assert_ne!(m.seeds["sim.train"], m.seeds["sim.test"]);
    assert!(m.metrics["rel_error"] > 0.0);
    let hist = std::fs::read_to_string(tmp.path().join("hist.csv")).unwrap();
    let total: usize = hist.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 400);
}

#[test]
fn analytic_cannot_be_trained() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path());
    cfg.set("method", "analytic").unwrap();
    assert!(run(Command::Train, &cfg).is_err());
}
