//! Training loop (Adam on the MSE loss, cosine-annealed learning rate) and
//! evaluation against the metric suite.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{pad_to_multiple, unpad_prediction, SegmentationSample};
use crate::error::{Error, Result};
use crate::metrics::{self, Mask, MetricReport};
use crate::network::Model;
use crate::params::Params;
use crate::tape::Tape;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Re-initialize the optimizer state every this many epochs (0 = never).
    /// The learning-rate schedule is untouched: it stays one cosine arc.
    /// Desk-scale runs need this: after the early collapse to the
    /// all-background solution, the second-moment estimates keep the
    /// surviving target gradients frozen; a fresh state lets them act.
    pub adam_restart_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 16,
            lr_max: 1e-3,
            lr_min: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            checkpoint_every: 100,
            adam_restart_every: 0,
        }
    }
}

impl TrainConfig {
    /// Desk-scale recipe: 200 epochs, small batches for more optimizer
    /// steps per epoch (escapes the all-background local optimum that the
    /// heavy class imbalance creates), checkpoints every 50 epochs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 2,
            checkpoint_every: 50,
            adam_restart_every: 25,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config(
                "learning rates must satisfy 0 < lr_min <= lr_max".into(),
            ));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Cosine annealing: `lr_min + (lr_max - lr_min) * (1 + cos(pi e / E)) / 2`.
/// Hits `lr_max` at epoch 0 and `lr_min` at `epochs` exactly.
pub fn cosine_lr(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch > cfg.epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} outside schedule range 0..={}",
            cfg.epochs
        )));
    }
    if epoch == 0 {
        return Ok(cfg.lr_max);
    }
    if epoch == cfg.epochs {
        return Ok(cfg.lr_min);
    }
    let t = epoch as f64 / cfg.epochs as f64;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// Mean over all pixels of the squared prediction error.
pub fn mse_loss(pred: &Array2<f64>, gt: &Mask) -> Result<f64> {
    if pred.dim() != gt.dim() {
        return Err(Error::Argument(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.dim(),
            gt.dim()
        )));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(gt.iter())
        .map(|(&p, &g)| {
            let d = p - f64::from(g.min(1));
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Adam with bias correction; state is aligned with parameter order.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(params: &Params, cfg: &TrainConfig) -> Self {
        let zeros: Vec<ArrayD<f64>> = params
            .values()
            .iter()
            .map(|p| ArrayD::zeros(p.raw_dim()))
            .collect();
        Adam {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[ArrayD<f64>], lr: f64) {
        assert_eq!(grads.len(), params.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, value) in params.values_mut().iter_mut().enumerate() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
            ndarray::Zip::from(m).and(v).and(value).and(g).for_each(
                |m, v, p, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / bc1;
                    let vh = *v / bc2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                },
            );
        }
    }
}

/// Per-epoch statistics handed to the progress callback.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_dir: PathBuf,
    /// best checkpoint by evaluation mIoU, when an eval set was given
    pub best: Option<(PathBuf, f64)>,
    pub log_path: PathBuf,
    pub final_loss: f64,
}

/// One forward/backward pass for a single sample; returns the loss and the
/// per-parameter gradients in parameter order.
fn sample_grads(model: &Model, sample: &SegmentationSample) -> Result<(f64, Vec<ArrayD<f64>>)> {
    let (h, w) = sample.image.dim();
    let mut x = Array4::<f64>::zeros((1, 1, h, w));
    x.slice_mut(ndarray::s![0, 0, .., ..]).assign(&sample.image);
    let mut target = Array4::<f64>::zeros((1, 1, h, w));
    ndarray::Zip::from(&mut target.slice_mut(ndarray::s![0, 0, .., ..]))
        .and(&sample.mask)
        .for_each(|t, &m| *t = f64::from(m.min(1)));

    let mut tape = Tape::new();
    let bind = model.params.bind(&mut tape);
    let xv = tape.leaf(x.into_dyn());
    let out = model.net.forward_tape(&mut tape, &bind, xv)?;
    let loss = tape.mse(out, target.into_dyn());
    let loss_value = tape.value(loss).as_slice().unwrap()[0];
    let mut grads = tape.backward(loss);
    let collected = bind
        .vars()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            grads
                .take(v)
                .unwrap_or_else(|| ArrayD::zeros(model.params.values()[i].raw_dim()))
        })
        .collect();
    Ok((loss_value, collected))
}

/// Train in place. Runs `epochs x ceil(n / batch)` Adam steps, appends one
/// `epoch,lr,loss` line per epoch to `train_log.csv`, checkpoints every
/// `checkpoint_every` epochs and at the end. When `eval_set` is present the
/// best checkpoint by test mIoU (threshold 0.5) is tracked under `best/`.
pub fn train(
    model: &mut Model,
    train_set: &[SegmentationSample],
    cfg: &TrainConfig,
    out_dir: &Path,
    eval_set: Option<&[SegmentationSample]>,
    start_epoch: usize,
    mut progress: Option<&mut dyn FnMut(EpochStats)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    if start_epoch >= cfg.epochs {
        return Err(Error::Argument(format!(
            "start epoch {start_epoch} is not below total epochs {}",
            cfg.epochs
        )));
    }
    fs::create_dir_all(out_dir)?;

    let divisor = model.net.config().divisor();
    let padded: Vec<SegmentationSample> = train_set
        .iter()
        .map(|s| pad_to_multiple(s, divisor).sample)
        .collect();

    let log_path = out_dir.join("train_log.csv");
    let mut log = if start_epoch == 0 {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "epoch,lr,loss")?;
        f
    } else {
        fs::OpenOptions::new().append(true).open(&log_path)?
    };

    let mut adam = Adam::new(&model.params, cfg);
    let mut best: Option<(PathBuf, f64)> = None;
    let mut final_loss = f64::NAN;

    for epoch in start_epoch..cfg.epochs {
        if cfg.adam_restart_every > 0 && epoch > start_epoch && epoch % cfg.adam_restart_every == 0
        {
            adam = Adam::new(&model.params, cfg);
        }
        let lr = cosine_lr(epoch, cfg)?;
        let mut order: Vec<usize> = (0..padded.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<ArrayD<f64>> = model
                .params
                .values()
                .iter()
                .map(|p| ArrayD::zeros(p.raw_dim()))
                .collect();
            let mut batch_loss = 0.0;
            for &si in batch {
                let (loss, grads) = sample_grads(model, &padded[si])?;
                batch_loss += loss;
                for (a, g) in acc.iter_mut().zip(grads) {
                    *a += &g;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    batch: batch_index,
                    loss: batch_loss,
                });
            }
            for a in acc.iter_mut() {
                a.mapv_inplace(|v| v * scale);
            }
            adam.step(&mut model.params, &acc, lr);
            epoch_loss += batch_loss * batch.len() as f64;
        }
        epoch_loss /= padded.len() as f64;
        final_loss = epoch_loss;
        writeln!(log, "{epoch},{lr},{epoch_loss}")?;
        log.flush()?;
        if let Some(cb) = progress.as_deref_mut() {
            cb(EpochStats {
                epoch,
                lr,
                mean_loss: epoch_loss,
            });
        }

        let done = epoch + 1;
        if done % cfg.checkpoint_every == 0 && done != cfg.epochs {
            let dir = out_dir.join(format!("ckpt_epoch_{done:05}"));
            let report = checkpoint_eval(model, eval_set)?;
            save_checkpoint(&dir, model, done, report.as_ref().map(|r| r.summary()))?;
            track_best(model, out_dir, done, report, &mut best)?;
        }
    }

    let final_dir = out_dir.join("final");
    let summary = checkpoint_eval(model, eval_set)?;
    save_checkpoint(&final_dir, model, cfg.epochs, summary.as_ref().map(|r| r.summary()))?;
    track_best(model, out_dir, cfg.epochs, summary, &mut best)?;

    Ok(TrainOutcome {
        final_dir,
        best,
        log_path,
        final_loss,
    })
}

fn checkpoint_eval(
    model: &Model,
    eval_set: Option<&[SegmentationSample]>,
) -> Result<Option<MetricReport>> {
    match eval_set {
        Some(set) if !set.is_empty() => Ok(Some(evaluate(model, set, 0.5, 3.0)?)),
        _ => Ok(None),
    }
}

fn track_best(
    model: &Model,
    out_dir: &Path,
    epoch: usize,
    report: Option<MetricReport>,
    best: &mut Option<(PathBuf, f64)>,
) -> Result<()> {
    let Some(report) = report else {
        return Ok(());
    };
    let better = best.as_ref().is_none_or(|(_, miou)| report.miou > *miou);
    if better {
        let dir = out_dir.join("best");
        save_checkpoint(&dir, model, epoch, Some(report.summary()))?;
        *best = Some((dir, report.miou));
    }
    Ok(())
}

/// Serialize the flat report summary (`miou`, `niou`, `pd`, `fa_e6`,
/// `threshold`, `n_images`) as JSON.
pub fn write_report(report: &MetricReport, path: &Path) -> Result<()> {
    fs::write(
        path,
        serde_json::to_string_pretty(&report.summary())? + "\n",
    )?;
    Ok(())
}

/// Forward every sample (padded to the network contract, predictions
/// cropped back), binarize at `threshold` and compute the full report.
pub fn evaluate(
    model: &Model,
    test_set: &[SegmentationSample],
    threshold: f64,
    dist_px: f64,
) -> Result<MetricReport> {
    let pairs = predict_masks(model, test_set, threshold)?;
    metrics::report(&pairs, threshold, dist_px)
}

/// Per-sample binarized predictions paired with ground truth.
pub fn predict_masks(
    model: &Model,
    test_set: &[SegmentationSample],
    threshold: f64,
) -> Result<Vec<(Mask, Mask)>> {
    if test_set.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let mut pairs = Vec::with_capacity(test_set.len());
    for sample in test_set {
        let prob = predict_prob(model, sample)?;
        let mask = metrics::binarize(&prob, threshold)?;
        pairs.push((mask, sample.mask.clone()));
    }
    Ok(pairs)
}

/// Probability map for one sample at its original size.
pub fn predict_prob(model: &Model, sample: &SegmentationSample) -> Result<Array2<f64>> {
    let divisor = model.net.config().divisor();
    let padded = pad_to_multiple(sample, divisor);
    let (h, w) = padded.sample.image.dim();
    let mut x = Array4::<f64>::zeros((1, 1, h, w));
    x.slice_mut(ndarray::s![0, 0, .., ..])
        .assign(&padded.sample.image);
    let out = model.forward(&x)?;
    let full = out.slice(ndarray::s![0, 0, .., ..]).to_owned();
    Ok(unpad_prediction(&full, padded.orig_h, padded.orig_w))
}
