//! Adam training loop with focal loss, per-epoch validation and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod data;

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{Checkpoint, CheckpointMeta, CKPT_MAGIC, CKPT_VERSION};
pub use data::{
    cached_entry_images, entry_segments, load_dataset, manifest_segments, render_entry, synthetic_event_dataset, Dataset,
    FeatureSpec, SegmentRef, SYNTH_EVENT_RECORDING_S,
};

use crate::autodiff::{Graph, Rng};
use crate::error::{Error, Result};
use crate::eval::{challenge_scores, confusion, ConfusionMatrix, ScoreReport, TaskId};
use crate::model::{argmax_rows, Model};
use crate::objective::{class_weights_from_counts, default_gamma, focal_loss, ClassWeightPolicy, FocalParams};

const SHUFFLE_DOMAIN: u64 = 0x73687566;
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn default_task() -> TaskId {
    TaskId::Task1_2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: TaskId,
    /// Focusing parameter; the task default when absent.
    pub gamma: Option<f64>,
    pub checkpoint_dir: Option<PathBuf>,
    pub class_weighting: bool,
    pub class_weight_clip: ClassWeightPolicy,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub lr_decay: f64,
    /// Stop after this many epochs without a better validation Score.
    pub early_stopping_patience: Option<usize>,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            seed: 0,
            task: default_task(),
            gamma: None,
            checkpoint_dir: None,
            class_weighting: true,
            class_weight_clip: ClassWeightPolicy::default(),
            lr_decay: 1.0,
            early_stopping_patience: None,
            eval_batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("batch sizes must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive");
        }
        if !(self.lr_decay > 0.0) {
            return bad("lr_decay must be positive");
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) {
                return bad("gamma must be >= 0");
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| default_gamma(self.task))
    }

    pub fn adam(&self, epoch: usize) -> AdamParams {
        AdamParams {
            lr: self.learning_rate * self.lr_decay.powi(epoch as i32),
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_score: Option<f64>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes") + "\n"
    }
}

/// Predictions of a model over a dataset.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub probs: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub loss: f64,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let right: u64 = (0..self.confusion.classes()).map(|i| self.confusion.counts[i][i]).sum();
        right as f64 / self.confusion.total().max(1) as f64
    }

    pub fn report(&self, task: TaskId) -> Result<ScoreReport> {
        challenge_scores(&self.confusion, task)
    }
}

/// Inference-mode probabilities, batch by batch.
pub fn predict_dataset(model: &Model<f32>, ds: &Dataset, batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(ds.len());
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        out.extend(model.predict_proba(&ds.batch(chunk), chunk.len())?);
    }
    Ok(out)
}

pub fn evaluate_dataset(model: &Model<f32>, ds: &Dataset, focal: &FocalParams, batch: usize) -> Result<Evaluation> {
    let probs = predict_dataset(model, ds, batch)?;
    let flat: Vec<f64> = probs.iter().flatten().copied().collect();
    let (loss, _) = focal_loss(&flat, &ds.labels, focal)?;
    let predictions = argmax_rows(&probs);
    let confusion = confusion(&predictions, &ds.labels, model.config.n_classes)?;
    Ok(Evaluation {
        probs,
        predictions,
        loss,
        confusion,
    })
}

/// Focal parameters for a training set: the configured gamma and inverse-frequency weights.
pub fn focal_for(config: &TrainConfig, train: &Dataset) -> Result<FocalParams> {
    let classes = config.task.n_classes();
    let weights = if config.class_weighting {
        class_weights_from_counts(&train.class_counts(classes), &config.class_weight_clip)?
    } else {
        vec![1.0; classes]
    };
    FocalParams::new(config.gamma(), weights)
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model<f32>,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub focal: FocalParams,
    pub history: TrainHistory,
    pub best_score: Option<f64>,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        if model.config.n_classes != config.task.n_classes() {
            return Err(Error::InvalidConfig(format!(
                "model has {} classes, task {} has {}",
                model.config.n_classes,
                config.task,
                config.task.n_classes()
            )));
        }
        if train.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let focal = focal_for(&config, train)?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer {
            model,
            adam,
            config,
            focal,
            history: TrainHistory::default(),
            best_score: None,
        })
    }

    /// Continue from a checkpoint; `epochs` extends or keeps the stored target.
    pub fn resume(ckpt: Checkpoint, train: &Dataset, epochs: Option<usize>) -> Result<Self> {
        let mut config = ckpt.meta.train.clone();
        if let Some(e) = epochs {
            config.epochs = e;
        }
        let mut t = Trainer::new(ckpt.model, config, train)?;
        t.adam = ckpt.adam;
        t.history = ckpt.meta.history;
        t.best_score = ckpt.meta.best_score;
        if t.history.epochs.len() != ckpt.epoch as usize {
            return Err(Error::VersionMismatch(format!(
                "checkpoint epoch {} with {} history entries",
                ckpt.epoch,
                t.history.epochs.len()
            )));
        }
        Ok(t)
    }

    pub fn completed_epochs(&self) -> usize {
        self.history.epochs.len()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: self.model.config.clone(),
                train: self.config.clone(),
                history: self.history.clone(),
                best_score: self.best_score,
            },
            epoch: self.completed_epochs() as u32,
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// One optimizer step on a batch; returns the batch loss and the number of correct argmax predictions.
    pub fn step(&mut self, batch: crate::autodiff::Tensor<f32>, labels: &[usize], hp: &AdamParams) -> Result<(f64, usize)> {
        let mut g = Graph::new(true, self.config.seed, self.adam.t);
        let x = g.input(batch);
        let f = self.model.forward(&mut g, x)?;
        let loss = g.focal_loss(f.logits, labels, &self.focal)?;
        let lv = g.value(loss).data[0] as f64;
        if !lv.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.adam.t)));
        }
        let c = self.model.config.n_classes;
        let probs: Vec<Vec<f64>> = g.value(f.probs).to_f64().chunks(c).map(<[f64]>::to_vec).collect();
        let correct = argmax_rows(&probs).iter().zip(labels).filter(|(p, l)| p == l).count();
        let grads = g.backward(loss, &self.model.params)?;
        adam_step(&mut self.model.params, &grads, &mut self.adam, hp)?;
        let updates = g.take_bn_updates();
        self.model.params.apply_bn_updates(&updates, self.model.config.bn_momentum);
        Ok((lv, correct))
    }

    pub fn run_epoch(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<EpochRecord> {
        let started = Instant::now();
        let epoch = self.completed_epochs();
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::keyed(self.config.seed, &[SHUFFLE_DOMAIN, epoch as u64]).shuffle(&mut order);
        let hp = self.config.adam(epoch);
        let (mut loss_sum, mut correct, mut steps) = (0.0, 0usize, 0u64);
        for chunk in order.chunks(self.config.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (l, c) = self.step(train.batch(chunk), &labels, &hp)?;
            loss_sum += l * chunk.len() as f64;
            correct += c;
            steps += 1;
        }
        if !self.model.params.all_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let (val_loss, val_score) = match val.filter(|v| !v.is_empty()) {
            Some(v) => {
                let ev = evaluate_dataset(&self.model, v, &self.focal, self.config.eval_batch_size)?;
                (Some(ev.loss), ev.report(self.config.task).ok().map(|r| r.score))
            }
            None => (None, None),
        };
        let rec = EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_score,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.5} acc {:.4} val_score {}",
            rec.train_loss,
            rec.train_accuracy,
            rec.val_score.map_or("-".into(), |s| format!("{s:.4}"))
        );
        self.history.epochs.push(rec.clone());
        let improved = match (rec.val_score, self.best_score) {
            (Some(s), Some(b)) => s > b,
            (Some(_), None) => true,
            (None, _) => val.is_none(),
        };
        if improved {
            self.best_score = rec.val_score;
        }
        if let Some(dir) = &self.config.checkpoint_dir {
            let ckpt = self.checkpoint();
            if improved {
                ckpt.save(&dir.join(BEST_CHECKPOINT))?;
            }
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(rec)
    }

    fn stale_epochs(&self) -> usize {
        let best = self.best_score;
        self.history
            .epochs
            .iter()
            .rev()
            .take_while(|e| best.is_some() && e.val_score != best)
            .count()
    }

    /// Train until `config.epochs` epochs are complete or early stopping triggers.
    pub fn fit(&mut self, train: &Dataset, val: Option<&Dataset>) -> Result<&TrainHistory> {
        while self.completed_epochs() < self.config.epochs {
            self.run_epoch(train, val)?;
            if let Some(p) = self.config.early_stopping_patience {
                if self.stale_epochs() >= p {
                    log::info!("early stop after {} epochs", self.completed_epochs());
                    break;
                }
            }
        }
        Ok(&self.history)
    }
}

pub fn train(model: Model<f32>, train: &Dataset, val: Option<&Dataset>, config: TrainConfig) -> Result<(Model<f32>, TrainHistory)> {
    let mut t = Trainer::new(model, config, train)?;
    t.fit(train, val)?;
    Ok((t.model, t.history))
}
