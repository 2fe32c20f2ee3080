use kgalign_core::eval::{evaluate, LinkProbe};
use kgalign_core::synth::{write_dataset, SyntheticSpec};
use kgalign_core::trainer::{epoch_order, NoDev};
use kgalign_core::{
    Dataset, EvalOptions, KgSide, LoadOptions, Split, TrainConfig, TrainState, Trainer,
};
use tempfile::TempDir;

fn dataset(seed: u64) -> (TempDir, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec {
        n_entities: 200,
        dim: 8,
        embedding_noise: 1.0,
        seed,
        ..SyntheticSpec::default()
    };
    write_dataset(&spec, dir.path()).unwrap();
    let ds = Dataset::load(dir.path(), &LoadOptions::default()).unwrap();
    (dir, ds)
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        queue_k: 4,
        max_epochs: 3,
        ..TrainConfig::default()
    }
}

fn run(ds: &Dataset, cfg: TrainConfig) -> (TrainState, Vec<kgalign_core::MetricRow>) {
    let (vx, vy) = ds.views(false).unwrap();
    let mut probe = LinkProbe::new(vx, vy, ds.links.pairs(Split::Dev), EvalOptions::default());
    let mut t = Trainer::new(cfg, vx, vy).unwrap();
    let rows = t.train(&mut probe, &mut |_| Ok(())).unwrap();
    (t.into_state(), rows)
}

#[test]
fn seeded_runs_are_bit_identical() {
    let (_d, ds) = dataset(1);
    let cfg = TrainConfig { learning_rate: 1e-3, ..small_config() };
    let (s1, r1) = run(&ds, cfg.clone());
    let (s2, r2) = run(&ds, cfg);
    assert_eq!(r1.len(), r2.len());
    assert!(r1.iter().zip(&r2).all(|(a, b)| a.same_run(b)));
    assert_eq!(s1.to_bytes(), s2.to_bytes());
    assert!(s1.optimizer_steps > 0);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (_d, ds) = dataset(2);
    let cfg = TrainConfig { learning_rate: 0.0, ..small_config() };
    let (state, rows) = run(&ds, cfg.clone());
    let fresh = TrainState::new(&cfg, 8).unwrap();
    assert!(state.optimizer_steps > 0);
    assert_eq!(state.pair.online, fresh.pair.online);
    assert_eq!(state.pair.target, fresh.pair.target);
    let (vx, vy) = ds.views(false).unwrap();
    let dev = ds.links.pairs(Split::Dev);
    let baseline = evaluate(&fresh.pair.online, &vx, &vy, &dev, EvalOptions::default(), "dev").unwrap();
    assert!(rows.iter().all(|r| r.dev_hit1 == baseline.hit1));
}

#[test]
fn no_optimizer_step_before_both_queues_are_warm() {
    let (_d, ds) = dataset(3);
    let (vx, vy) = ds.views(false).unwrap();
    let cfg = small_config();
    let mut t = Trainer::new(cfg.clone(), vx, vy).unwrap();
    for step in 0..cfg.queue_k {
        assert_eq!(t.state().optimizer_steps, 0, "before step {step}");
        t.step().unwrap();
    }
    assert_eq!(t.state().optimizer_steps, 0);
    assert!(t.state().queue_x.is_warm() && t.state().queue_y.is_warm());
    t.step().unwrap();
    assert_eq!(t.state().optimizer_steps, 1);
    assert_eq!(t.state().batches_seen, cfg.queue_k as u64 + 1);
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let (_d, ds) = dataset(4);
    let (vx, vy) = ds.views(false).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-3, ..small_config() };
    let mut a = Trainer::new(cfg.clone(), vx, vy).unwrap();
    for _ in 0..(cfg.queue_k + 7) {
        a.step().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bin");
    a.state().save(&path).unwrap();
    let mut b = Trainer::resume(cfg, vx, vy, TrainState::load(&path).unwrap()).unwrap();
    for _ in 0..30 {
        a.step().unwrap();
        b.step().unwrap();
    }
    assert_eq!(a.state().to_bytes(), b.state().to_bytes());
}

#[test]
fn capacity_is_checked_before_training() {
    let (_d, ds) = dataset(5);
    let (vx, vy) = ds.views(false).unwrap();
    let cfg = TrainConfig { batch_size: 64, queue_k: 64, ..TrainConfig::default() };
    assert!(matches!(
        Trainer::new(cfg, vx, vy),
        Err(kgalign_core::Error::CapacityViolation { k: 64, n: 64, .. })
    ));
}

#[test]
fn training_never_reads_test_links() {
    let (_d, ds) = dataset(6);
    let mut altered = ds.clone();
    let dev = ds.links.pairs(Split::Dev);
    let train = ds.links.pairs(Split::Train);
    // same dev pairs, test pairs scrambled
    let mut test = ds.links.pairs(Split::Test);
    let ys: Vec<_> = test.iter().map(|p| p.1).rev().collect();
    for (p, y) in test.iter_mut().zip(ys) {
        p.1 = y;
    }
    let mut with_dev = train.clone();
    with_dev.extend(dev.iter().copied());
    altered.links = kgalign_core::AlignmentLinkSet::from_splits(with_dev, test, 0.0, 0).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-3, ..small_config() };
    let run_with = |d: &Dataset| {
        let (vx, vy) = d.views(false).unwrap();
        let mut probe = LinkProbe::new(vx, vy, dev.clone(), EvalOptions::default());
        let mut t = Trainer::new(cfg.clone(), vx, vy).unwrap();
        t.train(&mut probe, &mut |_| Ok(())).unwrap();
        t.into_state().to_bytes()
    };
    assert_eq!(run_with(&ds), run_with(&altered));
}

#[test]
fn epoch_loss_decreases() {
    let (_d, ds) = dataset(7);
    let (vx, vy) = ds.views(false).unwrap();
    let cfg = TrainConfig { learning_rate: 1e-3, max_epochs: 10, patience: 100, ..small_config() };
    let mut t = Trainer::new(cfg, vx, vy).unwrap();
    let rows = t.train(&mut NoDev, &mut |_| Ok(())).unwrap();
    let first = rows.iter().find(|r| r.epoch == 1).unwrap().loss;
    let tenth = rows.iter().find(|r| r.epoch == 10).unwrap().loss;
    assert!(first.is_finite() && tenth < first, "epoch 1 {first}, epoch 10 {tenth}");
}

#[test]
fn slow_momentum_run_is_stable() {
    let (_d, ds) = dataset(8);
    let (vx, vy) = ds.views(false).unwrap();
    let cfg = TrainConfig { max_epochs: 5, patience: 100, ..small_config() };
    let mut t = Trainer::new(cfg, vx, vy).unwrap();
    let rows = t.train(&mut NoDev, &mut |_| Ok(())).unwrap();
    assert!(rows.iter().skip(1).all(|r| r.loss.is_finite()));
    assert!(t.state().pair.online.is_finite() && t.state().pair.target.is_finite());
}

#[test]
fn patience_stops_early() {
    let (_d, ds) = dataset(9);
    let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 50, patience: 2, ..small_config() };
    let (state, rows) = run(&ds, cfg);
    // initial evaluation sets the best; two flat epochs exhaust patience
    assert_eq!(rows.len(), 3);
    assert_eq!(state.epoch, 2);
    assert_eq!(state.best_params(), &TrainState::new(&small_config(), 8).unwrap().pair.online);
}

#[test]
fn shuffles_ignore_the_other_graph() {
    assert_eq!(epoch_order(3, 2, KgSide::X, 100), epoch_order(3, 2, KgSide::X, 100));
    assert_ne!(epoch_order(3, 2, KgSide::X, 100), epoch_order(3, 2, KgSide::Y, 100));
}
