mod common;

use std::collections::BTreeMap;
use std::fs;

use framemix::data::{self, BatchConfig};
use framemix::synth::{CorpusManifest, MANIFEST_FILE};
use framemix::train::Trainer;
use framemix::{Arm, BoundingBox, Error, LabeledImage, MixupConfig, Pixels, TrainingConfig};

fn batch_config(mixup: Option<MixupConfig>, triples: usize, flip: f64) -> BatchConfig {
    BatchConfig { batch_size: 8, triples_per_batch: triples, flip_probability: flip, mixup, triple_stride: 1, seed: 9 }
}

#[test]
fn splits_round_trip_from_generator() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let test = 120 * 600 / 3056;
    assert_eq!((s.image_train.len(), s.image_test.len()), (120 - test, test));
    assert_eq!((s.video_train.num_videos(), s.video_train.total_frames()), (2, 80));
    assert_eq!(s.video_test.len(), 20);
    assert!((0..s.video_test.len()).all(|i| !s.video_test.boxes(i).is_empty()));
    // Loading through the manifest file path works too.
    let again = data::load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(again.manifest, s.manifest);
}

#[test]
fn each_epoch_visits_every_still_once() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let cfg = batch_config(Some(MixupConfig::default()), 2, 0.5);
    let per_epoch = data::batches_per_epoch(s.image_train.len(), 8);
    assert_eq!(per_epoch, s.image_train.len().div_ceil(8));
    let batches: Vec<_> = data::joint_batches(&s, &cfg, 0..2).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.len(), 2 * per_epoch);
    for epoch in 0..2 {
        let mut seen = BTreeMap::new();
        for b in batches.iter().filter(|b| b.epoch == epoch) {
            assert_eq!(b.image_ids.len(), b.mixup_samples.len());
            assert_eq!(b.triples.len(), 2);
            for id in &b.image_ids {
                *seen.entry(id.clone()).or_insert(0) += 1;
            }
        }
        let expected: BTreeMap<String, i32> =
            (0..s.image_train.len()).map(|i| (s.image_train.id(i).to_string(), 1)).collect();
        assert_eq!(seen, expected);
    }
    let last = &batches[per_epoch - 1];
    assert_eq!(last.mixup_samples.len(), s.image_train.len() - 8 * (per_epoch - 1));
}

#[test]
fn triples_come_from_negative_videos_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let cfg = BatchConfig { triple_stride: 2, ..batch_config(None, 8, 0.0) };
    let b = data::build_batch(&s, &cfg, 0, 3).unwrap();
    for t in &b.triples {
        assert!(t.mid.source_video.starts_with("neg_"));
        assert_eq!(t.prev.source_video, t.mid.source_video);
        assert_eq!(t.mid.frame_index, t.prev.frame_index + 2);
        assert_eq!(t.next.frame_index, t.mid.frame_index + 2);
    }
    let none = data::build_batch(&s, &batch_config(None, 0, 0.0), 0, 3).unwrap();
    assert!(none.triples.is_empty());
}

#[test]
fn batch_stream_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let cfg = batch_config(Some(MixupConfig::Beta { alpha: 0.2 }), 3, 0.5);
    let a: Vec<_> = data::joint_batches(&s, &cfg, 0..1).unwrap().collect::<Result<_, _>>().unwrap();
    let b: Vec<_> = data::joint_batches(&s, &cfg, 0..1).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(a, b);
    let other = BatchConfig { seed: 10, ..cfg };
    let c: Vec<_> = data::joint_batches(&s, &other, 0..1).unwrap().collect::<Result<_, _>>().unwrap();
    assert_ne!(a, c);
}

#[test]
fn identity_pipeline_yields_raw_stills() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let cfg = batch_config(Some(MixupConfig::Discrete { c: 0.5, p: 0.0 }), 0, 0.0);
    for step in 0..3 {
        let b = data::build_batch(&s, &cfg, 1, step).unwrap();
        let order = data::epoch_order(s.image_train.len(), cfg.seed, 1);
        for (k, sample) in b.mixup_samples.iter().enumerate() {
            let raw = s.image_train.load(order[step * 8 + k]).unwrap();
            assert_eq!(sample.pixels, raw.pixels);
            assert_eq!(sample.boxes, raw.boxes);
            assert_eq!(sample.lambda_used, 0.0);
        }
    }
}

#[test]
fn flip_rate_matches_probability() {
    let img = LabeledImage::new(
        Pixels::from_fn(1, 2, 1, |_, x, _| x as f64),
        vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap()],
    )
    .unwrap();
    let mut rng = framemix::seed::stream(5, &[]);
    let n = 100_000;
    let p = 0.5;
    let flips = (0..n)
        .filter(|_| data::horizontal_flip(img.clone(), &mut rng, p).pixels.get(0, 0, 0) == 1.0)
        .count();
    let freq = flips as f64 / n as f64;
    let se = (p * (1.0 - p) / n as f64).sqrt();
    assert!((freq - p).abs() <= 3.0 * se, "{freq}");
}

#[test]
fn corrupted_manifest_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    common::small_corpus(dir.path());
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "  this is not json";
    fs::write(&path, lines.join("\n")).unwrap();
    let err = data::load_manifest(dir.path()).unwrap_err().to_string();
    assert!(err.contains("line 7"), "{err}");
    assert!(err.contains("manifest.json"), "{err}");
}

#[test]
fn schema_and_missing_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let path = dir.path().join(MANIFEST_FILE);

    let mut m: CorpusManifest = s.manifest.clone();
    m.schema_version = 99;
    m.save(&path).unwrap();
    let err = data::load_manifest(dir.path()).unwrap_err().to_string();
    assert!(err.contains("schema version 99"), "{err}");

    s.manifest.save(&path).unwrap();
    let victim = dir.path().join(&s.manifest.images[3].path);
    fs::remove_file(&victim).unwrap();
    match data::load_manifest(dir.path()).unwrap_err() {
        Error::Load { path, .. } => assert_eq!(path, victim),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_video_train_fails_at_training_setup() {
    let dir = tempfile::tempdir().unwrap();
    let s = common::small_corpus(dir.path());
    let mut m = s.manifest.clone();
    m.videos.retain(|v| v.positive);
    m.save(&dir.path().join(MANIFEST_FILE)).unwrap();

    let splits = data::load_manifest(dir.path()).unwrap();
    assert!(splits.video_train.is_empty());
    let cfg = TrainingConfig { arm: Arm::Tcr, ..TrainingConfig::desk() };
    let err = Trainer::new(cfg, &splits).err().expect("tcr without video-train must fail");
    assert!(matches!(err, Error::Config(_)), "{err:?}");
    let base = TrainingConfig { arm: Arm::Base, ..TrainingConfig::desk() };
    assert!(Trainer::new(base, &splits).is_ok());
}
