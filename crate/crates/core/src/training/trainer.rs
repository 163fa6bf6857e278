use rayon::prelude::*;

use super::loss::{smoothed_soft_cross_entropy, smoothed_soft_cross_entropy_graph};
use super::optim::{cosine_lr, AdamWState, EmaState};
use super::report::{EpochRecord, StopReason, TrainReport};
use super::StageConfig;
use crate::augment::{mix_batch, pixel_augment};
use crate::dataset::{epoch_order, Batch, ClassLabel, LabeledImage};
use crate::error::{Error, Result};
use crate::imaging::ImageU8;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::graph::Graph;
use crate::tensor::Tensor;
use crate::vit::{bind_params, forward, forward_graph, is_head_param, Mode, ViTParams};

pub struct TrainOutcome<T> {
    /// EMA weights at the end of training.
    pub params: ViTParams<T>,
    /// Raw optimizer weights at the end of training.
    pub raw: ViTParams<T>,
    /// EMA weights of the best validation epoch.
    pub best: ViTParams<T>,
    pub report: TrainReport,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub loss: f64,
    pub accuracy: f64,
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn correct<T: Scalar>(logits: &Tensor<T>, labels: &[ClassLabel]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, l)| argmax(row) == l.index())
        .count()
}

/// Eval-mode loss and accuracy; batches run in parallel and are reduced
/// in order.
pub fn evaluate<T: Scalar>(params: &ViTParams<T>, data: &[LabeledImage], batch_size: usize, eps: f64) -> Result<EvalSummary> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::Contract("evaluation needs data and a positive batch size".into()));
    }
    let parts = data
        .par_chunks(batch_size)
        .map(|chunk| {
            let images: Vec<ImageU8> = chunk.iter().map(|l| l.image.clone()).collect();
            let labels: Vec<ClassLabel> = chunk.iter().map(|l| l.label).collect();
            let batch = Batch::<T>::from_images(&images, &labels)?;
            let (logits, _) = forward(params, &batch.images, Mode::Eval, false, None)?;
            let loss = smoothed_soft_cross_entropy(&logits, &batch.labels, eps)?.to_f64_lossy();
            Ok((loss * chunk.len() as f64, correct(&logits, &labels)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    Ok(EvalSummary {
        loss: parts.iter().map(|p| p.0).sum::<f64>() / n,
        accuracy: parts.iter().map(|p| p.1).sum::<usize>() as f64 / n,
    })
}

struct Trainer<'a, T> {
    cfg: &'a StageConfig,
    seed: u64,
    train: &'a [LabeledImage],
    params: ViTParams<T>,
    ema: EmaState<T>,
    adam: AdamWState<T>,
}

impl<T: Scalar> Trainer<'_, T> {
    /// One pass over the shuffled training set; returns (loss, accuracy).
    fn epoch(
        &mut self,
        stage: u8,
        epoch: usize,
        global_epoch: usize,
        trainable: &dyn Fn(&str) -> bool,
        lr_of: &dyn Fn(&str) -> f64,
        weight_decay: f64,
    ) -> Result<(f64, f64)> {
        let cfg = self.cfg;
        let order = epoch_order(self.train.len(), self.seed, global_epoch);
        let mut aug_rng = rng::stream(self.seed, "augment", global_epoch as u64);
        let mut drop_rng = rng::stream(self.seed, "dropout", global_epoch as u64);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        let lrs: Vec<f64> = (0..self.params.len()).map(|i| lr_of(self.params.name_at(i))).collect();

        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                images.push(pixel_augment(&self.train[i].image, &cfg.augment, &mut aug_rng).0);
                labels.push(self.train[i].label);
            }
            let batch = Batch::<T>::from_images(&images, &labels)?;
            let (inputs, targets) = if cfg.mix_samples {
                let m = mix_batch(&batch, &cfg.augment, &mut aug_rng)?;
                (m.images, m.soft_labels)
            } else {
                (batch.images, batch.labels)
            };

            let mut g = Graph::new();
            let nodes = bind_params(&mut g, &self.params, trainable);
            let out = forward_graph(&mut g, &self.params, &nodes, &inputs, Mode::Train, Some(&mut drop_rng))?;
            let loss = smoothed_soft_cross_entropy_graph(&mut g, out.logits, &targets, cfg.label_smoothing)?;
            let value = g.value(loss).item().to_f64_lossy();
            if !value.is_finite() {
                let lr = lrs.iter().cloned().fold(0.0, f64::max);
                return Err(Error::Diverged { stage, epoch, batch: b + 1, lr, loss: value });
            }
            hits += correct(g.value(out.logits), &labels);
            loss_sum += value * chunk.len() as f64;

            let mut grads = g.backward(loss)?;
            let grads: Vec<Option<Tensor<T>>> = nodes
                .iter()
                .map(|&n| if g.is_trainable(n) { grads.take(n) } else { None })
                .collect();
            self.adam.step(&mut self.params, &grads, |i| lrs[i], weight_decay, &cfg.adam)?;
            self.ema.update(&self.params)?;
        }
        let n = self.train.len() as f64;
        Ok((loss_sum / n, hits as f64 / n))
    }
}

/// Two-stage fine-tuning.
///
/// Stage 1 trains the head alone at a constant rate; backbone parameters
/// enter the graph as constants, so they receive no gradient and stay
/// bit-identical. Stage 2 trains everything with a fresh optimizer state
/// under a per-epoch cosine schedule. EMA weights start as a copy of
/// `init`, follow every optimizer step, and are what validation scores.
pub fn train_two_stage<T: Scalar>(
    init: ViTParams<T>,
    train: &[LabeledImage],
    val: &[LabeledImage],
    cfg: &StageConfig,
    seed: u64,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Contract("training needs non-empty train and validation sets".into()));
    }
    let mc = init.config().clone();
    for item in train.iter().chain(val) {
        let img = &item.image;
        if (img.height(), img.width(), img.channels()) != (mc.image_size, mc.image_size, mc.channels) {
            return Err(Error::Dimension(format!(
                "image {}x{}x{} does not match model input {s}x{s}x{}",
                img.height(),
                img.width(),
                img.channels(),
                mc.channels,
                s = mc.image_size
            )));
        }
        if item.label.index() >= mc.num_classes {
            return Err(Error::LabelRange { label: item.label.index(), classes: mc.num_classes });
        }
    }

    let mut t = Trainer {
        cfg,
        seed,
        train,
        ema: EmaState::new(&init, cfg.ema_decay),
        adam: AdamWState::new(&init),
        params: init,
    };
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, ViTParams<T>)> = None;
    let mut consider = |records: &mut Vec<EpochRecord>, rec: EpochRecord, ema: &ViTParams<T>| -> bool {
        let improved = best.as_ref().is_none_or(|(i, _)| rec.val_acc > records[*i].val_acc);
        log::info!(
            "stage {} epoch {}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            rec.stage,
            rec.epoch,
            rec.train_loss,
            rec.train_acc,
            rec.val_loss,
            rec.val_acc
        );
        records.push(rec);
        if improved {
            best = Some((records.len() - 1, ema.clone()));
        }
        improved
    };

    let s1 = cfg.stage1;
    let frozen = s1.backbone_frozen;
    let stage1_trainable = move |name: &str| !frozen || is_head_param(name);
    for e in 0..s1.epochs {
        let (loss, acc) = t.epoch(1, e + 1, e, &stage1_trainable, &|_| s1.head_lr, s1.weight_decay)?;
        let v = evaluate(&t.ema.shadow, val, cfg.batch_size, cfg.label_smoothing)?;
        let rec = EpochRecord {
            stage: 1,
            epoch: e + 1,
            train_loss: loss,
            train_acc: acc,
            val_loss: v.loss,
            val_acc: v.accuracy,
            backbone_lr: if frozen { 0.0 } else { s1.head_lr },
            head_lr: s1.head_lr,
        };
        consider(&mut records, rec, &t.ema.shadow);
    }

    let s2 = cfg.stage2;
    t.adam = AdamWState::new(&t.params);
    let mut stale = 0usize;
    let mut stop = StopReason::Completed;
    for e in 0..s2.max_epochs {
        let bb = cosine_lr(e, s2.max_epochs, s2.backbone_lr, s2.lr_min)?;
        let hd = cosine_lr(e, s2.max_epochs, s2.head_lr, s2.lr_min)?;
        let lr_of = move |name: &str| if is_head_param(name) { hd } else { bb };
        let (loss, acc) = t.epoch(2, e + 1, s1.epochs + e, &|_| true, &lr_of, s2.weight_decay)?;
        let v = evaluate(&t.ema.shadow, val, cfg.batch_size, cfg.label_smoothing)?;
        let rec = EpochRecord {
            stage: 2,
            epoch: e + 1,
            train_loss: loss,
            train_acc: acc,
            val_loss: v.loss,
            val_acc: v.accuracy,
            backbone_lr: bb,
            head_lr: hd,
        };
        if consider(&mut records, rec, &t.ema.shadow) {
            stale = 0;
        } else {
            stale += 1;
        }
        if s2.early_stopping && stale >= s2.patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }
    if records.is_empty() {
        stop = StopReason::NoEpochs;
    }

    let (best_index, best_params) = match best {
        Some((i, p)) => (Some(i), p),
        None => (None, t.ema.shadow.clone()),
    };
    Ok(TrainOutcome {
        params: t.ema.shadow,
        raw: t.params,
        best: best_params,
        report: TrainReport { records, best: best_index, stop_reason: stop },
    })
}
