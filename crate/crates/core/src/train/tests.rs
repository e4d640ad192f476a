use super::*;
use crate::data::{AugmentConfig, Dataset, Sample, Split};
use crate::model::{Checkpoint, ModelConfig, Variant};
use crate::tensor::Tensor;
use std::path::Path;

fn setup(dir: &Path, variant: Variant) -> ExperimentConfig {
    let manifest = cmd_synth(3, 10, 5, &dir.join("data"), 32).unwrap();
    ExperimentConfig {
        manifest: Some(manifest),
        output_dir: dir.join("run"),
        batch_size: 8,
        max_epochs: 3,
        prefetch: 1,
        model: ModelConfig::tiny(variant, 3),
        ..ExperimentConfig::default()
    }
}

#[test]
fn train_writes_artifacts_and_consistent_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), Variant::Fusion);
    let out = cmd_train(&cfg, false).unwrap();
    for f in ["config.toml", "manifest.tsv", "history.jsonl", "history.csv", "best.ckpt", "last.ckpt", "test_report.json"] {
        assert!(out.run_dir.join(f).is_file(), "{f}");
    }
    assert_eq!(out.history.len(), 3);
    assert_eq!(read_history(&out.run_dir).unwrap(), out.history);
    assert!(out.history.windows(2).all(|w| w[1].lr <= w[0].lr));
    let min = out.history.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_val_loss, min);
    let best = Checkpoint::load(&out.run_dir.join("best.ckpt")).unwrap();
    assert_eq!(best.meta["val_loss"].as_f64().unwrap(), min);
    assert_eq!(out.test_report.total, 6);
    // a second fresh run into the same directory is refused
    assert_eq!(cmd_train(&cfg, false).unwrap_err().category(), "config");
}

#[test]
fn same_seed_gives_identical_history_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), Variant::CnnOnly);
    let a = cmd_train(&ExperimentConfig { output_dir: dir.path().join("a"), ..cfg.clone() }, false).unwrap();
    let b = cmd_train(&ExperimentConfig { output_dir: dir.path().join("b"), prefetch: 0, ..cfg }, false).unwrap();
    let read = |p: &Path| std::fs::read(p.join("history.jsonl")).unwrap();
    assert_eq!(read(&a.run_dir), read(&b.run_dir));
}

#[test]
fn resumed_run_matches_straight_run_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { max_epochs: 4, ..setup(dir.path(), Variant::Fusion) };
    let straight = ExperimentConfig { output_dir: dir.path().join("straight"), ..cfg.clone() };
    cmd_train(&straight, false).unwrap();
    let split = ExperimentConfig { output_dir: dir.path().join("split"), max_epochs: 2, ..cfg.clone() };
    cmd_train(&split, false).unwrap();
    assert!(cmd_train(&ExperimentConfig { output_dir: dir.path().join("nothing"), ..cfg.clone() }, true).is_err());
    let resumed = cmd_train(&ExperimentConfig { max_epochs: 4, ..split }, true).unwrap();
    assert_eq!(resumed.history.len(), 4);
    let a = Checkpoint::load(&dir.path().join("straight/last.ckpt")).unwrap();
    let b = Checkpoint::load(&dir.path().join("split/last.ckpt")).unwrap();
    assert!(a.params.bitwise_eq(&b.params));
    assert_eq!(a.state, b.state);
    assert_eq!(
        std::fs::read(dir.path().join("straight/history.jsonl")).unwrap(),
        std::fs::read(dir.path().join("split/history.jsonl")).unwrap()
    );
}

#[test]
fn evaluate_and_predict_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), Variant::TransformerOnly);
    let out = cmd_train(&ExperimentConfig { max_epochs: 1, ..cfg.clone() }, false).unwrap();
    let ck = out.run_dir.join("best.ckpt");
    let m = out.run_dir.join("manifest.tsv");
    let r1 = cmd_evaluate(&ck, &m, Split::Test, 4, Some(&out.run_dir)).unwrap();
    let r2 = cmd_evaluate(&ck, &m, Split::Test, 5, None).unwrap();
    assert_eq!(r1, r2);
    assert!(out.run_dir.join("test_report.txt").is_file());

    let other = cmd_synth(2, 6, 1, &dir.path().join("two"), 32).unwrap();
    let e = cmd_evaluate(&ck, &other, Split::Test, 4, None).unwrap_err();
    assert!(e.to_string().contains('3') && e.to_string().contains('2'), "{e}");

    let img = dir.path().join("data/images/artist_01_0003.ppm");
    let ranked = cmd_predict(&ck, &img).unwrap();
    assert_eq!(ranked.len(), 3);
    assert!((ranked.iter().map(|r| r.probability).sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(ranked.windows(2).all(|w| w[0].probability >= w[1].probability));
    assert_eq!(ranked, cmd_predict(&ck, &img).unwrap());
    let ckpt = Checkpoint::load(&ck).unwrap();
    let model = ckpt.model().unwrap();
    let x = crate::data::resize_bilinear(&crate::data::read_image(&img).unwrap(), 32, 32).unwrap();
    let mut p = ckpt.params;
    let pred = model.predict(&mut p, x.reshape(vec![1, 3, 32, 32]).unwrap()).unwrap();
    assert_eq!(ranked[0].class_id, pred.class_ids[0]);

    let garbage = dir.path().join("bad.ppm");
    std::fs::write(&garbage, b"P6\n4 4\n255\nxx").unwrap();
    assert_eq!(cmd_predict(&ck, &garbage).unwrap_err().category(), "input");
}

#[test]
fn non_finite_loss_reports_epoch_and_batch() {
    let cfg = ExperimentConfig { model: ModelConfig::tiny(Variant::TransformerOnly, 2), batch_size: 2, prefetch: 0, ..ExperimentConfig::default() };
    let mut px = Tensor::full(vec![3, 32, 32], 0.5f32);
    px.data_mut()[7] = f32::NAN;
    let samples = (0..4)
        .map(|i| Sample { pixels: if i == 3 { px.clone() } else { Tensor::full(vec![3, 32, 32], 0.2) }, artist_id: i % 2, style_id: 0 })
        .collect();
    let ds = Dataset::from_samples(Split::Val, samples, 2).unwrap();
    let mut t = Trainer::new(cfg, vec!["a".into(), "b".into()], &[2, 2]).unwrap();
    let e = t.train_epoch(&ds, 1).unwrap_err();
    assert_eq!(e.category(), "numeric");
    assert!(e.to_string().contains("epoch 1, batch 1"), "{e}");
}

#[test]
fn synth_command_is_deterministic_and_checks_artists() {
    let dir = tempfile::tempdir().unwrap();
    let a = cmd_synth(4, 3, 7, &dir.path().join("a"), 16).unwrap();
    let b = cmd_synth(4, 3, 7, &dir.path().join("b"), 16).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(crate::data::Manifest::load(&a).unwrap().records.len(), 12);
    assert_eq!(cmd_synth(1, 3, 7, &dir.path().join("c"), 16).unwrap_err().category(), "config");
}

#[test]
fn single_variant_ablation_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { max_epochs: 1, augment: AugmentConfig::disabled(), ..setup(dir.path(), Variant::Fusion) };
    let out = cmd_ablation(&cfg, &[Variant::CnnOnly], &[1], "synthetic").unwrap();
    assert_eq!(out.table.rows.len(), 1);
    let text = out.table.to_text();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("| CNN Only | **"));
    assert!(dir.path().join("run/ablation.md").is_file());
}
