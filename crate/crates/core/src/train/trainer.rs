//! The epoch loop, validation, checkpointing and resumption.

use super::config::{ClassWeighting, ExperimentConfig};
use crate::data::{Batch, Dataset};
use crate::error::{config_err, Error, Result};
use crate::metrics::{compute_metrics, confusion, MetricsReport};
use crate::model::{Checkpoint, Classifier, Prediction};
use crate::nn::{Graph, LayerParams, Mode};
use crate::optim::{cross_entropy_value, l2_penalty, weighted_cross_entropy, ClassWeights, Optimizer, SchedulerState};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use std::sync::mpsc::sync_channel;
use std::time::Instant;

const DROPOUT_TAG: u64 = 0xd_0f;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const HISTORY_CSV: &str = "history.csv";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_macro_f1: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
}

pub struct Trainer {
    pub config: ExperimentConfig,
    pub model: Classifier,
    pub params: LayerParams<f32>,
    pub optimizer: Optimizer,
    pub scheduler: SchedulerState,
    pub weights: ClassWeights,
    pub labels: Vec<String>,
    pub history: Vec<EpochRecord>,
    /// `(epoch, val_loss, params)` of the best epoch so far.
    pub best: Option<(usize, f64, LayerParams<f32>)>,
    pub stopped: bool,
}

/// Mean validation loss and metrics for one pass.
pub struct EvalResult {
    pub loss: f64,
    pub report: MetricsReport,
    pub predictions: Vec<usize>,
}

impl Trainer {
    /// Fresh run. `config.model.num_classes` must already match `labels`.
    pub fn new(config: ExperimentConfig, labels: Vec<String>, train_counts: &[usize]) -> Result<Self> {
        config.validate()?;
        if config.model.num_classes != labels.len() {
            return Err(config_err!("model has {} classes but {} labels were given", config.model.num_classes, labels.len()));
        }
        let model = Classifier::new(config.model.clone())?;
        let params = model.init_params::<f32>(config.seed)?;
        let weights = match config.class_weighting {
            ClassWeighting::InverseFrequency => ClassWeights::from_counts(train_counts)?,
            ClassWeighting::Uniform => ClassWeights::uniform(labels.len()),
        };
        Ok(Trainer {
            optimizer: config.optimizer.build()?,
            scheduler: SchedulerState::new(config.scheduler.clone(), config.optimizer.lr),
            model,
            params,
            weights,
            labels,
            history: Vec::new(),
            best: None,
            stopped: false,
            config,
        })
    }

    /// One pass over the training split; returns the mean objective (CE + L2).
    pub fn train_epoch(&mut self, ds: &Dataset, epoch: usize) -> Result<f64> {
        let cfg = &self.config;
        let skip_singletons = self.model.variant().uses_cnn();
        let (seed, bs, prefetch) = (cfg.seed, cfg.batch_size, cfg.prefetch);
        let augment = cfg.augment.clone();
        let mut trace: VecDeque<f64> = VecDeque::with_capacity(8);
        let (mut total, mut count) = (0.0, 0usize);
        let mut step = |b: usize, batch: Batch, this: &mut Trainer| -> Result<()> {
            let n = batch.artist_ids.len();
            if n == 1 && skip_singletons {
                log::warn!("epoch {epoch}: skipping a 1-sample batch (batch norm needs at least 2)");
                return Ok(());
            }
            let rng = Rng::new(seed).split_path(&[DROPOUT_TAG, epoch as u64, b as u64]);
            let loss = {
                let mut g = Graph::new(&mut this.params, Mode::Train, rng);
                let x = g.input(batch.pixels);
                let logits = this.model.forward(&mut g, x)?;
                let ce = weighted_cross_entropy(g.tape_mut(), logits, &batch.artist_ids, &this.weights)?;
                let obj = match l2_penalty(&mut g, this.config.l2_scope, this.config.l2_coeff)? {
                    Some(l2) => g.tape_mut().add(ce, l2)?,
                    None => ce,
                };
                let value = g.value(obj).item()? as f64;
                if trace.len() == 8 {
                    trace.pop_front();
                }
                trace.push_back(value);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss is {value} at epoch {epoch}, batch {b}; recent batch losses {:?}",
                        trace.iter().collect::<Vec<_>>()
                    )));
                }
                g.backward(obj)?;
                value
            };
            this.optimizer.step(&mut this.params)?;
            total += loss * n as f64;
            count += n;
            Ok(())
        };
        let batches = ds.batches(bs, seed, epoch as u64, &augment)?;
        if prefetch == 0 {
            for (b, batch) in batches.enumerate() {
                step(b, batch?, self)?;
            }
        } else {
            // Batches are assembled on a worker and handed over in order.
            std::thread::scope(|s| -> Result<()> {
                let (tx, rx) = sync_channel(prefetch);
                s.spawn(move || {
                    for batch in batches {
                        if tx.send(batch).is_err() {
                            break;
                        }
                    }
                });
                for (b, batch) in rx.into_iter().enumerate() {
                    step(b, batch?, self)?;
                }
                Ok(())
            })?;
        }
        if count == 0 {
            return Err(config_err!("no trainable batch in epoch {epoch}"));
        }
        Ok(total / count as f64)
    }

    /// Eval-mode pass: weighted CE over the whole split and metrics.
    pub fn evaluate(&mut self, ds: &Dataset) -> Result<EvalResult> {
        evaluate_params(&self.model, &mut self.params, ds, self.config.batch_size, &self.weights)
    }

    /// Runs epochs until `max_epochs` or early stop, writing artifacts to `run_dir`.
    pub fn fit(&mut self, train: &Dataset, val: &Dataset, run_dir: &Path) -> Result<()> {
        while !self.stopped && self.history.len() < self.config.max_epochs {
            let epoch = self.history.len() + 1;
            let started = Instant::now();
            let lr = self.optimizer.lr();
            let train_loss = self.train_epoch(train, epoch)?;
            let eval = self.evaluate(val)?;
            let event = self.scheduler.update(eval.loss)?;
            self.optimizer.set_lr(event.lr);
            let record = EpochRecord {
                epoch,
                train_loss,
                val_loss: eval.loss,
                val_acc: eval.report.accuracy,
                val_macro_f1: eval.report.macro_avg.f1,
                lr,
                seconds: (!self.config.deterministic).then(|| started.elapsed().as_secs_f64()),
            };
            log::info!(
                "epoch {epoch:>3}  train {train_loss:.4}  val {:.4}  acc {:.4}  f1 {:.4}  lr {lr:.2e}{}",
                eval.loss,
                record.val_acc,
                record.val_macro_f1,
                if event.improved { "  *" } else { "" }
            );
            self.history.push(record);
            if event.improved {
                self.best = Some((epoch, eval.loss, self.params.clone()));
                self.best_checkpoint()?.save(&run_dir.join(BEST_CKPT))?;
            }
            if event.lr_reduced {
                log::info!("learning rate reduced to {:.2e}", event.lr);
            }
            if event.should_stop {
                log::info!("early stop after {} epochs without improvement", self.scheduler.epochs_since_improvement);
                self.stopped = true;
            }
            self.last_checkpoint().save(&run_dir.join(LAST_CKPT))?;
            write_history(run_dir, &self.history)?;
        }
        Ok(())
    }

    fn meta(&self) -> serde_json::Value {
        serde_json::json!({
            "epoch": self.history.len(),
            "stopped": self.stopped,
            "scheduler": self.scheduler,
            "history": self.history,
            "best_epoch": self.best.as_ref().map(|b| b.0),
            "best_val_loss": self.best.as_ref().map(|b| b.1),
            "experiment": self.config.to_toml(),
        })
    }

    /// Everything needed to resume: parameters, optimizer moments, scheduler and history.
    pub fn last_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.model.clone(), self.labels.clone(), self.params.clone());
        let (state, t) = self.optimizer.export_state();
        ck.state = state;
        let mut meta = self.meta();
        meta["optimizer_step"] = t.into();
        meta["optimizer_lr"] = self.optimizer.lr().into();
        ck.meta = meta;
        ck
    }

    pub fn best_checkpoint(&self) -> Result<Checkpoint> {
        let (epoch, loss, params) = self.best.as_ref().ok_or_else(|| config_err!("no epoch has completed"))?;
        let mut ck = Checkpoint::new(self.config.model.clone(), self.labels.clone(), params.clone());
        ck.meta = serde_json::json!({ "epoch": epoch, "val_loss": loss, "weights": self.weights.w });
        Ok(ck)
    }

    /// Restores a run from its last checkpoint. `config` may raise `max_epochs`;
    /// the model configuration must match.
    pub fn resume(config: ExperimentConfig, run_dir: &Path, train_counts: &[usize]) -> Result<Self> {
        let last = Checkpoint::load(&run_dir.join(LAST_CKPT))?;
        if last.config != config.model {
            return Err(config_err!("checkpoint model configuration differs from the requested one"));
        }
        let mut t = Trainer::new(config, last.labels.clone(), train_counts)?;
        let meta = &last.meta;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Format(format!("checkpoint meta lacks {k:?}")));
        let parse = |e: serde_json::Error| Error::Format(format!("checkpoint meta: {e}"));
        t.params = last.params;
        t.history = serde_json::from_value(field("history")?).map_err(parse)?;
        t.scheduler = serde_json::from_value(field("scheduler")?).map_err(parse)?;
        t.stopped = serde_json::from_value(field("stopped")?).map_err(parse)?;
        let step: u64 = serde_json::from_value(field("optimizer_step")?).map_err(parse)?;
        t.optimizer.import_state(&last.state, step);
        t.optimizer.set_lr(serde_json::from_value(field("optimizer_lr")?).map_err(parse)?);
        if let Some(epoch) = meta.get("best_epoch").and_then(|v| v.as_u64()) {
            let best = Checkpoint::load(&run_dir.join(BEST_CKPT))?;
            let loss = meta.get("best_val_loss").and_then(|v| v.as_f64()).unwrap_or(f64::INFINITY);
            t.best = Some((epoch as usize, loss, best.params));
        }
        Ok(t)
    }
}

/// Eval-mode predictions and weighted CE for a fixed parameter set.
pub fn evaluate_params(
    model: &Classifier,
    params: &mut LayerParams<f32>,
    ds: &Dataset,
    batch_size: usize,
    weights: &ClassWeights,
) -> Result<EvalResult> {
    let off = crate::data::AugmentConfig::disabled();
    let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
    let mut predictions = Vec::with_capacity(ds.len());
    let mut truth = Vec::with_capacity(ds.len());
    for batch in ds.batches(batch_size, 0, 0, &off)? {
        let batch = batch?;
        let mut g = Graph::new(params, Mode::Eval, Rng::new(0));
        let x = g.input(batch.pixels);
        let logits = model.forward(&mut g, x)?;
        let logits = g.value(logits);
        let w: f64 = batch.artist_ids.iter().map(|&t| weights.w[t]).sum();
        loss_sum += cross_entropy_value(logits, &batch.artist_ids, weights)? * w;
        weight_sum += w;
        predictions.extend(Prediction::from_logits(logits).class_ids);
        truth.extend(batch.artist_ids);
    }
    let report = compute_metrics(&confusion(&truth, &predictions, ds.num_classes)?)?;
    Ok(EvalResult { loss: loss_sum / weight_sum, report, predictions })
}

pub fn write_history(run_dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut jsonl = String::new();
    let mut csv = String::from("epoch,train_loss,val_loss,val_acc,val_macro_f1,lr\n");
    for r in history {
        jsonl.push_str(&serde_json::to_string(r).expect("plain record"));
        jsonl.push('\n');
        csv.push_str(&format!("{},{},{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_acc, r.val_macro_f1, r.lr));
    }
    for (name, text) in [(HISTORY_FILE, jsonl), (HISTORY_CSV, csv)] {
        let p = run_dir.join(name);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn read_history(run_dir: &Path) -> Result<Vec<EpochRecord>> {
    let p = run_dir.join(HISTORY_FILE);
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}:{}: {e}", p.display(), i + 1))))
        .collect()
}
