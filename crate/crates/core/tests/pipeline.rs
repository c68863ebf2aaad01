use occlift::harness::{evaluate, fit, init_model, load_scenes, read_checkpoint, write_checkpoint, ExperimentConfig};

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.train_scenes = 1;
    c.eval_scenes = 1;
    c.channels = 8;
    c.rays_per_camera = 8;
    c.occupancy_samples = 16;
    c
}

#[test]
fn single_scene_loss_goes_down() {
    let mut cfg = small();
    cfg.steps = 60;
    let scenes = load_scenes::<f64>(&cfg, false).unwrap();
    let t = fit(&cfg, &scenes, |_| {}, &mut None).unwrap();
    assert_eq!(t.history.len(), 60);
    let mean = |r: &[occlift::harness::StepRecord]| r.iter().map(|s| s.total).sum::<f64>() / r.len() as f64;
    let first = mean(&t.history[..10]);
    let last = mean(&t.history[50..]);
    assert!(last < first, "loss {first} -> {last}");
}

#[test]
fn checkpoint_restores_predictions() {
    let mut cfg = small();
    cfg.steps = 3;
    let train = load_scenes::<f64>(&cfg, false).unwrap();
    let held = load_scenes::<f64>(&cfg, true).unwrap();
    let t = fit(&cfg, &train, |_| {}, &mut None).unwrap();
    let want = evaluate(&t.model, &t.store, &held, cfg.protocol).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    write_checkpoint(&path, &t.store).unwrap();
    let (model, mut store) = init_model::<f64>(&cfg);
    store.load_from(&read_checkpoint::<f64>(&path).unwrap()).unwrap();
    let got = evaluate(&model, &store, &held, cfg.protocol).unwrap();
    assert_eq!(got.csv_row(), want.csv_row());
    let again = dir.path().join("again.bin");
    write_checkpoint(&again, &store).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn checkpoint_of_other_shape_is_rejected() {
    let cfg = small();
    let (_, store) = init_model::<f64>(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    write_checkpoint(&path, &store).unwrap();
    let mut wide = small();
    wide.channels = 12;
    let (_, mut other) = init_model::<f64>(&wide);
    assert!(other.load_from(&read_checkpoint::<f64>(&path).unwrap()).is_err());
}
