use serde::{Deserialize, Serialize};

/// How the precision/recall curve is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Precision envelope sampled at recall 0.00, 0.01, …, 1.00.
    #[default]
    Coco101,
    /// Area under the precision envelope at every recall change.
    AllPoint,
}

/// Average precision of a ranked list of TP/FP flags (highest score first).
///
/// Returns `None` when there is nothing to score (no GT and no detections);
/// such a class is left out of the class mean.
pub fn average_precision(flags: &[bool], gt_count: usize, interp: Interpolation) -> Option<f64> {
    if gt_count == 0 {
        return if flags.is_empty() { None } else { Some(0.0) };
    }
    if flags.is_empty() {
        return Some(0.0);
    }

    let mut recall = Vec::with_capacity(flags.len());
    let mut envelope = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (rank, &hit) in flags.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / gt_count as f64);
        envelope.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }

    let ap = match interp {
        Interpolation::Coco101 => {
            let mut sum = 0.0;
            let mut first = 0usize;
            for k in 0..=100u32 {
                let level = k as f64 / 100.0;
                // recall is non-decreasing, so the search start only moves forward
                while first < recall.len() && recall[first] < level {
                    first += 1;
                }
                if first < recall.len() {
                    sum += envelope[first];
                }
            }
            sum / 101.0
        }
        Interpolation::AllPoint => {
            let mut sum = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&envelope) {
                if *r > prev {
                    sum += (r - prev) * p;
                    prev = *r;
                }
            }
            sum
        }
    };
    Some(ap.clamp(0.0, 1.0))
}
