//! Detection scoring: IoU, NMS, greedy matching, interpolated AP and the
//! mAP@0.50 / mAP@0.75 / mAP@0.50:0.95 suite with P/R/F1 at an operating
//! point.

mod ap;
mod matching;
mod predictions;

pub use ap::{average_precision, Interpolation};
pub use matching::{match_detections, MatchResult};
pub use predictions::{format_predictions, parse_predictions, PredictionError};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Annotation, NormBox};

/// A scored, classed box predicted for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: NormBox,
}

impl Detection {
    pub fn new(image_id: impl Into<String>, class_id: usize, score: f64, bbox: NormBox) -> Self {
        Self {
            image_id: image_id.into(),
            class_id,
            score,
            bbox,
        }
    }
}

/// Intersection over union; zero when the union is empty.
pub fn iou(a: &NormBox, b: &NormBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Sorts indices by descending score; ties keep input order.
pub(crate) fn score_order<T>(items: &[T], score: impl Fn(&T) -> f64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| score(&items[b]).total_cmp(&score(&items[a])));
    idx
}

/// Greedy class-wise non-maximum suppression for detections of one image.
///
/// Candidates are visited by descending score, ties broken by lower class id
/// and then input order; a candidate is dropped when it overlaps an already
/// kept box of the same class by more than `iou_thr`.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in idx {
        let d = &dets[i];
        let suppressed = kept.iter().any(|&k| {
            dets[k].class_id == d.class_id && iou(&dets[k].bbox, &d.bbox) > iou_thr
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i].clone()).collect()
}

/// `2pr / (p + r)`, zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// The ten COCO thresholds 0.50, 0.55, …, 0.95.
pub fn coco_thresholds() -> Vec<f64> {
    threshold_range(50, 95, 5)
}

/// Thresholds `lo/100, (lo+step)/100, …, hi/100`. Computed from integers so
/// that 0.55 is the same double wherever it appears.
pub fn threshold_range(lo_pct: u32, hi_pct: u32, step_pct: u32) -> Vec<f64> {
    let step = step_pct.max(1);
    (lo_pct..=hi_pct)
        .step_by(step as usize)
        .map(|p| p as f64 / 100.0)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub class_count: usize,
    /// Confidence cut for the precision/recall/F1 operating point. AP uses
    /// every detection.
    pub conf_thr: f64,
    pub iou_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            class_count: crate::dataset::DEFAULT_CLASSES.len(),
            conf_thr: 0.25,
            iou_thresholds: coco_thresholds(),
            interpolation: Interpolation::Coco101,
        }
    }
}

/// AP of one class at one IoU threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdAp {
    pub iou: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Classes with a defined AP (at least one GT box or one detection).
    pub per_class_ap: BTreeMap<usize, Vec<ThresholdAp>>,
    pub map50: f64,
    pub map75: f64,
    pub map5095: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub conf_thr: f64,
    pub iou_thresholds: Vec<f64>,
    pub interpolation: Interpolation,
    pub images: usize,
    pub gt_boxes: usize,
    pub detections: usize,
}

/// One row of a confidence sweep at IoU 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("detection references unknown image `{0}`")]
    UnknownImage(String),
    #[error("class id {class_id} out of range for {class_count} classes")]
    UnknownClass { class_id: usize, class_count: usize },
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("IoU threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
}

/// Ground truth keyed by image id. Images without boxes must still be present
/// so that detections on them count as false positives.
pub type GroundTruth = BTreeMap<String, Vec<Annotation>>;

/// Detections and GT regrouped per (image, class), with deterministic
/// iteration order.
struct Indexed<'a> {
    /// image -> class -> gt boxes
    gt: BTreeMap<&'a str, BTreeMap<usize, Vec<NormBox>>>,
    /// image -> class -> (input index, detection)
    dets: BTreeMap<&'a str, BTreeMap<usize, Vec<(usize, &'a Detection)>>>,
    gt_per_class: BTreeMap<usize, usize>,
    classes: BTreeSet<usize>,
}

fn index<'a>(
    gt: &'a GroundTruth,
    dets: &'a [Detection],
    class_count: usize,
) -> Result<Indexed<'a>, EvalError> {
    let mut ix = Indexed {
        gt: BTreeMap::new(),
        dets: BTreeMap::new(),
        gt_per_class: BTreeMap::new(),
        classes: BTreeSet::new(),
    };
    for (image, anns) in gt {
        let per = ix.gt.entry(image.as_str()).or_default();
        for a in anns {
            if a.class_id >= class_count {
                return Err(EvalError::UnknownClass {
                    class_id: a.class_id,
                    class_count,
                });
            }
            per.entry(a.class_id).or_default().push(a.bbox);
            *ix.gt_per_class.entry(a.class_id).or_default() += 1;
            ix.classes.insert(a.class_id);
        }
    }
    for (i, d) in dets.iter().enumerate() {
        let Some((image, _)) = gt.get_key_value(&d.image_id) else {
            return Err(EvalError::UnknownImage(d.image_id.clone()));
        };
        if d.class_id >= class_count {
            return Err(EvalError::UnknownClass {
                class_id: d.class_id,
                class_count,
            });
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::InvalidScore(d.score));
        }
        ix.dets
            .entry(image.as_str())
            .or_default()
            .entry(d.class_id)
            .or_default()
            .push((i, d));
        ix.classes.insert(d.class_id);
    }
    Ok(ix)
}

impl Indexed<'_> {
    /// TP flags of every detection of `class`, in global score order (ties by
    /// input index), matched per image at `iou_thr`.
    fn ranked_flags(&self, class: usize, iou_thr: f64, min_score: f64) -> (Vec<bool>, usize) {
        let mut scored: Vec<(f64, usize, bool)> = Vec::new();
        let mut matched = 0;
        for (image, by_class) in &self.dets {
            let Some(dets) = by_class.get(&class) else {
                continue;
            };
            let dets: Vec<&(usize, &Detection)> =
                dets.iter().filter(|(_, d)| d.score >= min_score).collect();
            let gt: &[NormBox] = self
                .gt
                .get(image)
                .and_then(|m| m.get(&class))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let pairs: Vec<(f64, NormBox)> = dets.iter().map(|(_, d)| (d.score, d.bbox)).collect();
            let m = match_detections(gt, &pairs, iou_thr);
            matched += m.gt_matched.iter().filter(|x| **x).count();
            for ((idx, d), tp) in dets.iter().map(|x| (x.0, x.1)).zip(m.det_tp) {
                scored.push((d.score, idx, tp));
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        (scored.into_iter().map(|(_, _, tp)| tp).collect(), matched)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Scores `dets` against `gt`.
///
/// For every IoU threshold, AP is computed per class over all detections and
/// averaged over classes with a defined AP; `map5095` is the mean of those
/// per-threshold means. `map50` and `map75` are always reported, even when
/// the configured thresholds omit them.
pub fn evaluate(
    gt: &GroundTruth,
    dets: &[Detection],
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    for &t in &cfg.iou_thresholds {
        if !(0.0..=1.0).contains(&t) {
            return Err(EvalError::InvalidThreshold(t));
        }
    }
    let ix = index(gt, dets, cfg.class_count)?;

    let class_map_at = |thr: f64, per_class: &mut BTreeMap<usize, Vec<ThresholdAp>>| -> f64 {
        let mut aps = Vec::new();
        for &class in &ix.classes {
            let gt_count = ix.gt_per_class.get(&class).copied().unwrap_or(0);
            let (flags, _) = ix.ranked_flags(class, thr, f64::NEG_INFINITY);
            if let Some(ap) = average_precision(&flags, gt_count, cfg.interpolation) {
                aps.push(ap);
                per_class
                    .entry(class)
                    .or_default()
                    .push(ThresholdAp { iou: thr, ap });
            }
        }
        mean(&aps)
    };

    let mut per_class_ap = BTreeMap::new();
    let per_threshold: Vec<f64> = cfg
        .iou_thresholds
        .iter()
        .map(|&t| class_map_at(t, &mut per_class_ap))
        .collect();
    let lookup = |thr: f64| -> f64 {
        match cfg.iou_thresholds.iter().position(|&t| t == thr) {
            Some(i) => per_threshold[i],
            None => class_map_at(thr, &mut BTreeMap::new()),
        }
    };
    let map50 = lookup(0.5);
    let map75 = lookup(0.75);
    let map5095 = mean(&per_threshold);

    let (tp, fp, fn_) = operating_point(&ix, cfg.conf_thr, 0.5);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(EvalReport {
        per_class_ap,
        map50,
        map75,
        map5095,
        precision,
        recall,
        f1: f1_score(precision, recall),
        tp,
        fp,
        fn_,
        conf_thr: cfg.conf_thr,
        iou_thresholds: cfg.iou_thresholds.clone(),
        interpolation: cfg.interpolation,
        images: gt.len(),
        gt_boxes: ix.gt_per_class.values().sum(),
        detections: dets.len(),
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn operating_point(ix: &Indexed<'_>, conf_thr: f64, iou_thr: f64) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut predicted = 0;
    for &class in &ix.classes {
        let (flags, _) = ix.ranked_flags(class, iou_thr, conf_thr);
        predicted += flags.len();
        tp += flags.iter().filter(|f| **f).count();
    }
    let gt_total: usize = ix.gt_per_class.values().sum();
    (tp, predicted - tp, gt_total - tp)
}

/// Precision, recall and F1 at IoU 0.5 for each confidence threshold.
pub fn confidence_sweep(
    gt: &GroundTruth,
    dets: &[Detection],
    class_count: usize,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>, EvalError> {
    let ix = index(gt, dets, class_count)?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let (tp, fp, fn_) = operating_point(&ix, t, 0.5);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            SweepRow {
                threshold: t,
                precision,
                recall,
                f1: f1_score(precision, recall),
            }
        })
        .collect())
}

/// `threshold,precision,recall,f1` with a header row and LF endings.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("threshold,precision,recall,f1\n");
    for r in rows {
        s.push_str(&format!(
            "{:.2},{:.6},{:.6},{:.6}\n",
            r.threshold, r.precision, r.recall, r.f1
        ));
    }
    s
}

/// Detections grouped by image id, preserving input order within an image.
pub fn group_by_image(dets: &[Detection]) -> HashMap<&str, Vec<Detection>> {
    let mut out: HashMap<&str, Vec<Detection>> = HashMap::new();
    for d in dets {
        out.entry(d.image_id.as_str()).or_default().push(d.clone());
    }
    out
}
