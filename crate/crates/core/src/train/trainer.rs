use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::Sgd;
use super::{lr_at, TrainingConfig};
use crate::data::{self, BatchConfig, JointBatch, Splits};
use crate::detector::checkpoint::{Checkpoint, load_checkpoint};
use crate::detector::{DetectorState, Trainable};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detector, ApReport, DEFAULT_IOU_THRESHOLD};
use crate::tcr;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const RECORD_FILE: &str = "record.json";

/// Mean losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub detection: f64,
    pub regularization: f64,
    pub combined: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub detection_loss: f64,
    pub regularization_loss: f64,
    pub combined_loss: f64,
    pub image_test_ap: Option<f64>,
    pub video_test_ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainingConfig,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepLoss>,
    pub wall_clock_seconds: f64,
    pub final_checkpoint: Option<PathBuf>,
    /// Full reports from the last evaluation.
    pub image_test_report: Option<ApReport>,
    pub video_test_report: Option<ApReport>,
}

impl RunRecord {
    pub fn final_image_ap(&self) -> Option<f64> {
        self.image_test_report.as_ref().map(|r| r.ap)
    }

    pub fn final_video_ap(&self) -> Option<f64> {
        self.video_test_report.as_ref().map(|r| r.ap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Model, optimizer and data for one training run.
pub struct Trainer<'a> {
    pub config: TrainingConfig,
    pub splits: &'a Splits,
    pub state: DetectorState,
    optimizer: Sgd,
    batch: BatchConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainingConfig, splits: &'a Splits) -> Result<Self> {
        config.validate()?;
        let state = DetectorState::new(config.detector.clone(), config.seed)?;
        Self::with_state(config, splits, state, None)
    }

    /// Continue from a checkpoint written by an earlier run of the same config.
    pub fn resume(config: TrainingConfig, splits: &'a Splits, checkpoint: &Path) -> Result<Self> {
        config.validate()?;
        let (state, momentum) = load_checkpoint(checkpoint)?;
        if state.config() != &config.detector {
            return Err(Error::config("checkpoint detector config differs from training config"));
        }
        Self::with_state(config, splits, state, momentum)
    }

    fn with_state(
        config: TrainingConfig,
        splits: &'a Splits,
        state: DetectorState,
        momentum: Option<Vec<f64>>,
    ) -> Result<Self> {
        let batch = BatchConfig {
            batch_size: config.batch_size,
            triples_per_batch: if config.arm.uses_tcr() { config.triples_per_batch } else { 0 },
            flip_probability: config.flip_probability,
            mixup: config.arm.uses_mixup().then_some(config.mixup),
            triple_stride: config.triple_stride,
            seed: config.seed,
        };
        batch.validate(splits)?;
        let mut optimizer = Sgd::new(
            state.params().len(),
            config.momentum,
            config.weight_decay,
            state.trainable_mask(),
        );
        if let Some(m) = momentum {
            optimizer.set_velocity(m);
        }
        Ok(Self {
            config,
            splits,
            state,
            optimizer,
            batch,
        })
    }

    pub fn momentum(&self) -> &[f64] {
        self.optimizer.velocity()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.state, Some(self.optimizer.velocity()))
    }

    /// One optimizer step on a batch: mean detection loss over the stills plus
    /// `gamma` times the mean regularization loss over the triples.
    pub fn step(&mut self, batch: &JointBatch, lr: f64) -> Result<StepLoss> {
        let n_params = self.state.params().len();
        let det_scale = 1.0 / batch.mixup_samples.len() as f64;
        let state = &self.state;
        let det: Vec<(f64, Vec<f64>)> = batch
            .mixup_samples
            .par_iter()
            .map(|s| {
                let mut g = vec![0.0; n_params];
                let parts = state.detection_loss_grad(&s.pixels, &s.boxes, det_scale, &mut g)?;
                Ok((parts.total(), g))
            })
            .collect::<Result<_>>()?;
        let gamma = self.config.gamma;
        let eps = self.config.tcr_epsilon;
        let reg: Vec<(f64, Vec<f64>)> = if batch.triples.is_empty() {
            Vec::new()
        } else {
            let reg_scale = gamma / batch.triples.len() as f64;
            batch
                .triples
                .par_iter()
                .map(|t| {
                    let mut g = vec![0.0; n_params];
                    let l = tcr::triple_loss_and_grad(state, t, eps, reg_scale, &mut g)?;
                    Ok((l, g))
                })
                .collect::<Result<_>>()?
        };

        // Fixed-order reduction keeps the result independent of scheduling.
        let mut grad = vec![0.0; n_params];
        for (_, g) in det.iter().chain(&reg) {
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let detection = det.iter().map(|(l, _)| l).sum::<f64>() * det_scale;
        let regularization = if reg.is_empty() {
            0.0
        } else {
            reg.iter().map(|(l, _)| l).sum::<f64>() / reg.len() as f64
        };
        let loss = StepLoss {
            epoch: batch.epoch,
            step: batch.step,
            detection,
            regularization,
            combined: detection + gamma * regularization,
        };
        if !loss.combined.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss or gradient at epoch {} step {}: {loss:?}",
                batch.epoch, batch.step
            )));
        }
        self.optimizer.step(self.state.params_mut(), &grad, lr);
        self.state.step += 1;
        Ok(loss)
    }

    /// Run one full epoch; returns its step losses.
    pub fn run_epoch(&mut self) -> Result<Vec<StepLoss>> {
        let epoch = self.state.epoch;
        let lr = lr_at(&self.config, epoch)?;
        let per_epoch = data::batches_per_epoch(self.splits.image_train.len(), self.batch.batch_size);
        let mut losses = Vec::with_capacity(per_epoch);
        for s in 0..per_epoch {
            let batch = data::build_batch(self.splits, &self.batch, epoch, s)?;
            losses.push(self.step(&batch, lr)?);
        }
        self.state.epoch += 1;
        Ok(losses)
    }

    pub fn evaluate(&self) -> Result<(ApReport, ApReport)> {
        Ok((
            evaluate_detector(&self.state, &self.splits.image_test, DEFAULT_IOU_THRESHOLD)?,
            evaluate_detector(&self.state, &self.splits.video_test, DEFAULT_IOU_THRESHOLD)?,
        ))
    }

    /// Train the remaining epochs, checkpointing into `out` after each.
    pub fn run(mut self, out: Option<&Path>) -> Result<RunRecord> {
        let started = Instant::now();
        if let Some(dir) = out {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut record = RunRecord {
            config: self.config.clone(),
            epochs: Vec::new(),
            steps: Vec::new(),
            wall_clock_seconds: 0.0,
            final_checkpoint: None,
            image_test_report: None,
            video_test_report: None,
        };
        while self.state.epoch < self.config.epochs {
            let epoch = self.state.epoch;
            let lr = lr_at(&self.config, epoch)?;
            let losses = match self.run_epoch() {
                Ok(l) => l,
                Err(e) => {
                    if let Some(dir) = out {
                        record.wall_clock_seconds = started.elapsed().as_secs_f64();
                        // Diagnostic record of everything up to the failure.
                        let _ = record.save(&dir.join("aborted_record.json"));
                        let _ = fs::write(dir.join("abort.txt"), e.to_string());
                    }
                    return Err(e);
                }
            };
            let mean = |f: fn(&StepLoss) -> f64| losses.iter().map(f).sum::<f64>() / losses.len() as f64;
            let last = epoch + 1 == self.config.epochs;
            let (image_ap, video_ap) = if last || (epoch + 1) % self.config.eval_every == 0 {
                let (img, vid) = self.evaluate()?;
                let aps = (Some(img.ap), Some(vid.ap));
                record.image_test_report = Some(img);
                record.video_test_report = Some(vid);
                aps
            } else {
                (None, None)
            };
            record.epochs.push(EpochRecord {
                epoch,
                lr,
                detection_loss: mean(|l| l.detection),
                regularization_loss: mean(|l| l.regularization),
                combined_loss: mean(|l| l.combined),
                image_test_ap: image_ap,
                video_test_ap: video_ap,
            });
            record.steps.extend(losses);
            if let Some(dir) = out {
                let path = dir.join(CHECKPOINT_FILE);
                self.checkpoint().save(&path)?;
                record.final_checkpoint = Some(path);
            }
        }
        record.wall_clock_seconds = started.elapsed().as_secs_f64();
        if let Some(dir) = out {
            record.save(&dir.join(RECORD_FILE))?;
        }
        Ok(record)
    }
}

/// Train on already-loaded splits.
pub fn train_on(config: TrainingConfig, splits: &Splits, out: Option<&Path>) -> Result<RunRecord> {
    Trainer::new(config, splits)?.run(out)
}

/// Load the corpus at `corpus` and train.
pub fn train(config: TrainingConfig, corpus: &Path, out: Option<&Path>) -> Result<RunRecord> {
    let splits = data::load_manifest(corpus)?;
    train_on(config, &splits, out)
}
