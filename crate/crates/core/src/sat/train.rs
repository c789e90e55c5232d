use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use super::net::ToyDetector;
use super::perturb::{sat_perturb, SatConfig};
use super::SatError;
use crate::dataset::{Annotation, LabeledImage};
use crate::eval::{evaluate, EvalConfig};
use crate::seed::rng_for;

/// A grayscale training image in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub id: String,
    pub side: usize,
    pub pixels: Vec<f64>,
    pub annotations: Vec<Annotation>,
}

impl ToySample {
    /// Channel mean of `img`, resampled (nearest neighbour) to `side × side`.
    pub fn from_image(img: &LabeledImage, side: usize) -> Self {
        let mut pixels = Vec::with_capacity(side * side);
        for y in 0..side {
            let sy = ((y as u64 * img.height as u64) / side as u64) as u32;
            for x in 0..side {
                let sx = ((x as u64 * img.width as u64) / side as u64) as u32;
                let [r, g, b] = img.pixel(sx, sy);
                pixels.push((r as f64 + g as f64 + b as f64) / (3.0 * 255.0));
            }
        }
        Self {
            id: img.id.clone(),
            side,
            pixels,
            annotations: img.annotations.clone(),
        }
    }

    pub fn from_images(imgs: &[LabeledImage], side: usize) -> Vec<Self> {
        imgs.iter().map(|i| Self::from_image(i, side)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs without a strict val-mAP improvement before stopping.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossWeights,
    /// Cells scoring below this are not emitted as detections.
    pub min_score: f64,
    pub nms_iou: f64,
    /// Batch gradients with a larger L2 norm are rescaled to this norm.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            early_stop_patience: 15,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 0,
            loss: LossWeights::default(),
            min_score: 0.01,
            nms_iou: 0.5,
            max_grad_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SatError> {
        let bad = |m: String| Err(SatError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be ≥ 1".into());
        }
        if self.early_stop_patience > self.epochs {
            return bad(format!(
                "patience {} exceeds epoch budget {}",
                self.early_stop_patience, self.epochs
            ));
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return bad("gradient norm cap must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_map50: f64,
    /// Batches that received the adversarial pass.
    pub sat_batches: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub detector: ToyDetector,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_map50: f64,
    pub stopped_early: bool,
}

/// `epoch,train_loss,val_map50` with a header row.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_map50\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_map50));
    }
    out
}

/// Evaluation config used for validation: mAP at IoU 0.5 only.
pub fn map50_config(classes: usize) -> EvalConfig {
    EvalConfig {
        class_count: classes,
        iou_thresholds: vec![0.5],
        ..EvalConfig::default()
    }
}

/// mAP@0.5 of `det` on `samples` after NMS.
pub fn evaluate_map50(det: &ToyDetector, samples: &[ToySample], cfg: &TrainConfig) -> Result<f64, SatError> {
    let mut gt = BTreeMap::new();
    let mut dets = Vec::new();
    for s in samples {
        gt.insert(s.id.clone(), s.annotations.clone());
        dets.extend(det.predict(&s.pixels, &s.id, cfg.min_score, cfg.nms_iou)?);
    }
    Ok(evaluate(&gt, &dets, &map50_config(det.layout.classes))?.map50)
}

/// Mini-batch SGD with optional self-adversarial passes.
///
/// Each batch is optionally replaced by its [`sat_perturb`] image (decided
/// per batch with probability `apply_prob` from a stream separate from the
/// shuffling stream), then one step on the batch-mean loss is taken. After
/// each epoch the validation mAP@0.5 is measured; training stops once
/// `early_stop_patience` epochs pass without a strict improvement and the
/// best parameters are returned.
pub fn train(
    train_set: &[ToySample],
    val_set: &[ToySample],
    det: ToyDetector,
    tcfg: &TrainConfig,
    scfg: Option<&SatConfig>,
) -> Result<TrainOutcome, SatError> {
    tcfg.validate()?;
    if let Some(s) = scfg {
        s.validate()?;
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(SatError::InvalidConfig("training and validation sets must be non-empty".into()));
    }
    let side = det.layout.input_side;
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.side != side) {
        return Err(SatError::Shape {
            what: "sample side",
            expected: side,
            actual: s.side,
        });
    }
    let classes = det.layout.classes;
    if let Some(a) = train_set
        .iter()
        .chain(val_set)
        .flat_map(|s| &s.annotations)
        .find(|a| a.class_id >= classes)
    {
        return Err(SatError::InvalidConfig(format!(
            "label class {} outside the detector's {classes} classes",
            a.class_id
        )));
    }

    let mut det = det;
    let mut shuffle_rng = rng_for(tcfg.seed, &["toy-shuffle"]);
    let mut sat_rng = rng_for(tcfg.seed, &["toy-sat"]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (det.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut sat_batches = 0;
        for (b, batch) in order.chunks(tcfg.batch_size).enumerate() {
            let adversarial = match scfg {
                Some(s) => sat_rng.gen_bool(s.apply_prob),
                None => false,
            };
            sat_batches += adversarial as usize;
            let mut grad = vec![0.0; det.params.len()];
            let mut batch_loss = 0.0;
            for &k in batch {
                let sample = &train_set[k];
                let perturbed;
                let pixels = if adversarial {
                    let s = scfg.expect("adversarial implies config");
                    perturbed = sat_perturb(&det, &sample.pixels, &sample.annotations, s, &tcfg.loss)?;
                    &perturbed
                } else {
                    &sample.pixels
                };
                let lg = det.loss_and_grad(pixels, &sample.annotations, &tcfg.loss, false)?;
                batch_loss += lg.loss;
                grad.iter_mut().zip(&lg.params).for_each(|(g, v)| *g += v);
            }
            let mut scale = tcfg.learning_rate / batch.len() as f64;
            if let Some(max_norm) = tcfg.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt() / batch.len() as f64;
                if norm > max_norm {
                    scale *= max_norm / norm;
                }
            }
            let previous = det.params.clone();
            det.params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= scale * g);
            if !batch_loss.is_finite() || !det.is_finite() {
                let checkpoint = ToyDetector {
                    layout: det.layout.clone(),
                    params: previous,
                };
                return Err(SatError::Diverged {
                    epoch,
                    batch: b,
                    checkpoint: Box::new(checkpoint),
                    history,
                });
            }
            loss_sum += batch_loss;
        }

        let val_map50 = evaluate_map50(&det, val_set, tcfg)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_map50,
            sat_batches,
        });
        log::debug!("epoch {epoch}: loss {:.5} val mAP50 {val_map50:.4}", loss_sum / train_set.len() as f64);
        if val_map50 > best.2 {
            best = (det.clone(), epoch, val_map50);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.early_stop_patience {
                stopped_early = epoch < tcfg.epochs;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        detector: best.0,
        history,
        best_epoch: best.1,
        best_val_map50: best.2,
        stopped_early,
    })
}
