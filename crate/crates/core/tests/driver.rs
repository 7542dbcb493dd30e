mod common;

use std::fs;

use common::rel_close;
use framemix::data::Splits;
use framemix::train::{self, lr_at, MatrixSpec, Milestone, StepLoss, Trainer};
use framemix::{Arm, Error, MixupConfig, TrainingConfig};

/// Four short epochs on the small corpus: 52 optimizer steps.
fn short(arm: Arm) -> TrainingConfig {
    TrainingConfig {
        arm,
        epochs: 4,
        lr_milestones: vec![Milestone { epoch: 0, lr: 1e-2 }, Milestone { epoch: 3, lr: 1e-3 }],
        triples_per_batch: 4,
        eval_every: 100,
        ..TrainingConfig::desk()
    }
}

fn steps(cfg: TrainingConfig, splits: &Splits) -> Vec<StepLoss> {
    train::train_on(cfg, splits, None).unwrap().steps
}

fn assert_same_trajectory(a: &[StepLoss], b: &[StepLoss]) {
    assert!(a.len() >= 50 && a.len() == b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!((x.epoch, x.step), (y.epoch, y.step));
        assert!(rel_close(x.detection, y.detection, 1e-6), "{x:?} vs {y:?}");
        assert!(rel_close(x.combined, y.combined, 1e-6), "{x:?} vs {y:?}");
    }
}

#[test]
fn arm_reductions_hold_over_fifty_steps() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let base = steps(short(Arm::Base), &s);
    let identity = MixupConfig::Discrete { c: 0.5, p: 0.0 };

    let mixup_p0 = steps(TrainingConfig { mixup: identity, ..short(Arm::Mixup) }, &s);
    assert_same_trajectory(&base, &mixup_p0);

    let tcr_g0 = steps(TrainingConfig { gamma: 0.0, ..short(Arm::Tcr) }, &s);
    assert_same_trajectory(&base, &tcr_g0);
    assert!(tcr_g0.iter().any(|l| l.regularization > 0.0));

    let mixup = steps(short(Arm::Mixup), &s);
    let both_g0 = steps(TrainingConfig { gamma: 0.0, ..short(Arm::MixupTcr) }, &s);
    assert_same_trajectory(&mixup, &both_g0);

    // With the regularizer active the trajectory does change.
    let tcr = steps(short(Arm::Tcr), &s);
    assert!(tcr.iter().zip(&base).any(|(a, b)| a.detection != b.detection));
}

#[test]
fn identical_seeds_reproduce_runs() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let cfg = TrainingConfig { epochs: 2, ..short(Arm::MixupTcr) };
    let a = train::train_on(cfg.clone(), &s, None).unwrap();
    let b = train::train_on(cfg.clone(), &s, None).unwrap();
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.image_test_report, b.image_test_report);
    let c = train::train_on(TrainingConfig { seed: 1, ..cfg }, &s, None).unwrap();
    assert_ne!(a.steps, c.steps);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let cfg = short(Arm::MixupTcr);
    let full = train::train_on(cfg.clone(), &s, None).unwrap();

    let ckpt = dir.path().join("mid.json");
    let mut t = Trainer::new(cfg.clone(), &s).unwrap();
    t.run_epoch().unwrap();
    t.run_epoch().unwrap();
    t.checkpoint().save(&ckpt).unwrap();
    drop(t);

    let resumed = Trainer::resume(cfg, &s, &ckpt).unwrap().run(None).unwrap();
    assert_eq!(resumed.epochs.len(), 2);
    let tail: Vec<StepLoss> = full.steps.iter().filter(|l| l.epoch >= 2).cloned().collect();
    assert_eq!(tail.len(), resumed.steps.len());
    for (x, y) in tail.iter().zip(&resumed.steps) {
        assert!(rel_close(x.combined, y.combined, 1e-6), "{x:?} vs {y:?}");
    }
    assert_eq!(full.video_test_report, resumed.video_test_report);
}

#[test]
fn run_writes_record_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let out = dir.path().join("run");
    let cfg = TrainingConfig { epochs: 2, eval_every: 1, ..short(Arm::Mixup) };
    let rec = train::train_on(cfg.clone(), &s, Some(&out)).unwrap();
    assert_eq!(rec.epochs.len(), 2);
    assert!(rec.epochs.iter().all(|e| e.image_test_ap.is_some() && e.video_test_ap.is_some()));
    assert_eq!(rec.config, cfg);
    assert!(out.join(train::RECORD_FILE).is_file());
    let (state, momentum) = framemix::detector::checkpoint::load_checkpoint(&out.join(train::CHECKPOINT_FILE)).unwrap();
    assert_eq!(state.epoch, 2);
    assert!(momentum.is_some());
    assert_eq!(rec.final_checkpoint.as_deref(), Some(out.join(train::CHECKPOINT_FILE).as_path()));
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let out = dir.path().join("boom");
    let cfg = TrainingConfig {
        lr_milestones: vec![Milestone { epoch: 0, lr: 1e12 }],
        momentum: 0.0,
        ..short(Arm::Base)
    };
    let err = train::train_on(cfg, &s, Some(&out)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err:?}");
    assert!(out.join("aborted_record.json").is_file());
    assert!(fs::read_to_string(out.join("abort.txt")).unwrap().contains("non-finite"));
}

#[test]
fn schedules_follow_milestones() {
    let full = TrainingConfig::full_schedule();
    let got: Vec<f64> = [0, 15, 16, 21, 22, 25].iter().map(|&e| lr_at(&full, e).unwrap()).collect();
    assert_eq!(got, vec![1e-2, 1e-2, 1e-3, 1e-3, 1e-4, 1e-4]);
    assert!(lr_at(&full, 26).is_err());
    let desk = TrainingConfig::desk();
    let got: Vec<f64> = (0..10).map(|e| lr_at(&desk, e).unwrap()).collect();
    assert_eq!(got, [1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-2, 1e-3, 1e-3, 1e-4, 1e-4]);
}

#[test]
fn matrix_tables_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let base = TrainingConfig { epochs: 1, lr_milestones: vec![Milestone { epoch: 0, lr: 1e-2 }], ..short(Arm::Base) };
    let out = dir.path().join("matrix");
    let report = train::run_experiment_matrix(&s, &MatrixSpec::four_arms(base.clone(), vec![3]), Some(&out)).unwrap();
    assert_eq!(report.rows.len(), 4);
    let md = report.markdown();
    assert_eq!(md.lines().count(), 6);
    assert!(md.contains("AP on image-test") && md.contains("AP on video-test"));
    assert_eq!(report.csv().lines().count(), 5);
    for name in ["table.md", "table.csv", "matrix.json", "mixup_tcr/seed_3/pr_video_test.csv", "base/seed_3/pr_image_test.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }

    let sweep = MatrixSpec::beta_sweep(base.clone(), &[0.02, 0.05, 0.1, 0.2, 0.5], vec![0]);
    assert_eq!(sweep.rows.len(), 5);
    let report = train::run_experiment_matrix(&s, &sweep, None).unwrap();
    assert_eq!(report.rows.len(), 5);
    assert!(report.rows.iter().all(|r| r.arm == Arm::Mixup && r.mixup.as_deref().unwrap().starts_with("beta")));

    let empty = MatrixSpec { rows: Vec::new(), ..MatrixSpec::four_arms(base.clone(), vec![0]) };
    assert!(matches!(train::run_experiment_matrix(&s, &empty, None), Err(Error::Argument(_))));
    let no_seeds = MatrixSpec::four_arms(base, Vec::new());
    assert!(matches!(train::run_experiment_matrix(&s, &no_seeds, None), Err(Error::Argument(_))));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.toml");
    let cfg = TrainingConfig { mixup: MixupConfig::Beta { alpha: 0.05 }, ..TrainingConfig::full_schedule() };
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(TrainingConfig::load(&path).unwrap(), cfg);
    let text = fs::read_to_string(&path).unwrap().replace("momentum = 0.9", "momentum = 0.9\nmomentumm = 1");
    assert!(matches!(TrainingConfig::from_toml(&text), Err(Error::Config(_))));
}
