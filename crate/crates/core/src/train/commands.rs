//! The operations behind the CLI subcommands.

use super::config::ExperimentConfig;
use super::trainer::{evaluate_params, EpochRecord, Trainer, HISTORY_FILE, LAST_CKPT};
use crate::data::{generate_synthetic_dataset, read_image, resize_bilinear, split_dataset, Dataset, DatasetStats, Manifest, Split};
use crate::error::{config_err, Error, Result};
use crate::gradcheck::{run_suite, GradCheckConfig, GradCheckReport};
use crate::metrics::{comparison_table, ComparisonTable, MetricsReport, TableEntry};
use crate::model::{Checkpoint, Variant};
use crate::optim::ClassWeights;
use crate::tensor::Tensor;
use serde::Serialize;
use std::path::{Path, PathBuf};

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("plain data")
}

/// The manifest a run trains on, split with the run seed when it carries no split.
pub fn prepare_manifest(config: &ExperimentConfig) -> Result<Manifest> {
    let path = config.manifest.as_ref().ok_or_else(|| config_err!("no manifest given"))?;
    let m = Manifest::load(path)?;
    if m.is_split() {
        Ok(m)
    } else {
        split_dataset(&m, config.split_ratios, config.seed, false)
    }
}

/// Copy of `m` whose paths no longer depend on where the manifest file lives.
fn with_absolute_paths(m: &Manifest) -> Result<Manifest> {
    let mut out = m.clone();
    for r in &mut out.records {
        let p = std::path::absolute(m.resolve(r)).map_err(|e| Error::io(&r.path, e))?;
        r.path = p.to_string_lossy().into_owned();
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_report: MetricsReport,
    pub labels: Vec<String>,
}

/// Trains, checkpoints, and evaluates the best epoch on the test split. With
/// `resume` the run continues from `last.ckpt` in its output directory.
pub fn cmd_train(config: &ExperimentConfig, resume: bool) -> Result<TrainOutcome> {
    let mut config = config.clone();
    let manifest = prepare_manifest(&config)?;
    if config.model.num_classes != manifest.num_classes() {
        log::info!("setting num_classes to {} from the manifest", manifest.num_classes());
        config.model.num_classes = manifest.num_classes();
    }
    config.validate()?;
    let run_dir = config.run_dir();
    if !resume && run_dir.join(HISTORY_FILE).exists() {
        return Err(config_err!(
            "{} already holds a run; choose a fresh output directory or resume it",
            run_dir.display()
        ));
    }
    if resume && !run_dir.join(LAST_CKPT).exists() {
        return Err(config_err!("nothing to resume in {}", run_dir.display()));
    }
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;

    let size = config.model.image_size;
    let train = Dataset::load(&manifest, Split::Train, size)?;
    let val = Dataset::load(&manifest, Split::Val, size)?;
    let counts = train.class_counts();
    if !resume {
        write(&run_dir.join("config.toml"), config.to_toml())?;
        with_absolute_paths(&manifest)?.save(&run_dir.join("manifest.tsv"))?;
        write(&run_dir.join("dataset_stats.txt"), DatasetStats::of(&manifest).to_text())?;
    }
    let mut trainer = if resume {
        Trainer::resume(config.clone(), &run_dir, &counts)?
    } else {
        Trainer::new(config.clone(), manifest.artists.clone(), &counts)?
    };
    trainer.fit(&train, &val, &run_dir)?;

    let (best_epoch, best_val_loss, mut best) = trainer.best.clone().ok_or_else(|| config_err!("no epoch completed"))?;
    let test = Dataset::load(&manifest, Split::Test, size)?;
    let eval = evaluate_params(&trainer.model, &mut best, &test, config.batch_size, &trainer.weights)?;
    write(&run_dir.join("test_report.json"), to_json(&eval.report))?;
    write(&run_dir.join("test_report.txt"), eval.report.to_text(&trainer.labels))?;
    Ok(TrainOutcome {
        run_dir,
        history: trainer.history,
        best_epoch,
        best_val_loss,
        test_report: eval.report,
        labels: trainer.labels,
    })
}

/// Eval-mode metrics of a checkpoint on one split of a manifest.
pub fn cmd_evaluate(checkpoint: &Path, manifest: &Path, split: Split, batch_size: usize, out_dir: Option<&Path>) -> Result<MetricsReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let m = Manifest::load(manifest)?;
    if m.num_classes() != ck.config.num_classes {
        return Err(config_err!(
            "checkpoint predicts {} classes but the manifest has {} artists",
            ck.config.num_classes,
            m.num_classes()
        ));
    }
    if m.artists != ck.labels {
        log::warn!("manifest artist names differ from the checkpoint's labels; ids are matched by sorted position");
    }
    let model = ck.model()?;
    let ds = Dataset::load(&m, split, ck.config.image_size)?;
    let mut params = ck.params;
    let weights = ClassWeights::uniform(m.num_classes());
    let eval = evaluate_params(&model, &mut params, &ds, batch_size.max(1), &weights)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join(format!("{split}_report.json")), to_json(&eval.report))?;
        write(&dir.join(format!("{split}_report.txt")), eval.report.to_text(&ck.labels))?;
    }
    Ok(eval.report)
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedResult {
    pub variant: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug)]
pub struct AblationOutcome {
    pub table: ComparisonTable,
    pub results: Vec<SeedResult>,
}

fn mean_std(v: &[f64]) -> (f64, Option<f64>) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, None);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

/// Trains every variant for every seed on the same data recipe and tabulates mean
/// test accuracy and macro F1 (± sample std across seeds).
pub fn cmd_ablation(config: &ExperimentConfig, variants: &[Variant], seeds: &[u64], dataset_name: &str) -> Result<AblationOutcome> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(config_err!("ablation needs at least one variant and one seed"));
    }
    let base = config.run_dir();
    let mut results = Vec::new();
    for &seed in seeds {
        for &variant in variants {
            let mut c = config.clone();
            c.seed = seed;
            c.model.variant = variant;
            c.output_dir = base.join(format!("seed{seed}")).join(variant.as_str());
            log::info!("ablation: {variant} seed {seed}");
            let out = cmd_train(&c, false)?;
            results.push(SeedResult {
                variant,
                seed,
                accuracy: out.test_report.accuracy,
                macro_f1: out.test_report.macro_avg.f1,
                best_epoch: out.best_epoch,
            });
        }
    }
    let rows = variants
        .iter()
        .map(|&v| {
            let of = |f: fn(&SeedResult) -> f64| results.iter().filter(|r| r.variant == v).map(f).collect::<Vec<_>>();
            let (acc, acc_std) = mean_std(&of(|r| r.accuracy));
            let (f1, f1_std) = mean_std(&of(|r| r.macro_f1));
            (v.display_name().to_string(), vec![TableEntry { accuracy: acc, macro_f1: f1, accuracy_std: acc_std, f1_std }])
        })
        .collect();
    let table = comparison_table(rows, &[dataset_name.to_string()])?;
    std::fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    write(&base.join("ablation.md"), table.to_text())?;
    write(&base.join("ablation.json"), table.to_json())?;
    write(&base.join("ablation_runs.json"), to_json(&results))?;
    Ok(AblationOutcome { table, results })
}

/// Writes a synthetic dataset and returns its manifest path.
pub fn cmd_synth(num_artists: usize, per_artist: usize, seed: u64, out_dir: &Path, size: usize) -> Result<PathBuf> {
    generate_synthetic_dataset(num_artists, per_artist, seed, out_dir, size)?;
    Ok(out_dir.join("manifest.tsv"))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ranked {
    pub artist: String,
    pub class_id: usize,
    pub probability: f64,
}

/// Class probabilities for one image, most likely first (ties by class id).
pub fn cmd_predict(checkpoint: &Path, image: &Path) -> Result<Vec<Ranked>> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let s = ck.config.image_size;
    let img = resize_bilinear(&read_image(image)?, s, s)?;
    let batch = Tensor::new(vec![1, 3, s, s], img.into_data())?;
    let mut params = ck.params;
    let pred = model.predict(&mut params, batch)?;
    let mut ranked: Vec<Ranked> = pred.probs[0]
        .iter()
        .enumerate()
        .map(|(c, &p)| Ranked { artist: ck.labels[c].clone(), class_id: c, probability: p })
        .collect();
    ranked.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.class_id.cmp(&b.class_id)));
    Ok(ranked)
}

pub fn cmd_gradcheck(cfg: &GradCheckConfig) -> Result<Vec<GradCheckReport>> {
    run_suite(cfg)
}
