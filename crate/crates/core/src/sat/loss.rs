use serde::{Deserialize, Serialize};

use super::net::{sigmoid, softmax, Grid, BOX_CHANNELS};
use crate::dataset::Annotation;

/// Term weights of the detection loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Objectness BCE on positive cells.
    pub obj: f64,
    /// Objectness BCE on negative cells.
    pub noobj: f64,
    /// Squared box-offset error on positive cells.
    #[serde(rename = "box")]
    pub bbox: f64,
    /// Class cross-entropy on positive cells.
    pub class: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            obj: 1.0,
            noobj: 0.5,
            bbox: 5.0,
            class: 1.0,
        }
    }
}

impl LossWeights {
    /// Objectness of positive cells only.
    pub const POSITIVE_OBJECTNESS: LossWeights = LossWeights {
        obj: 1.0,
        noobj: 0.0,
        bbox: 0.0,
        class: 0.0,
    };

    /// Objectness BCE on every cell; convex in the logits.
    pub const OBJECTNESS: LossWeights = LossWeights {
        obj: 1.0,
        noobj: 1.0,
        bbox: 0.0,
        class: 0.0,
    };
}

/// Grid cell `(row, col)` containing the center of `a`.
pub fn center_cell(a: &Annotation, grid: usize) -> (usize, usize) {
    let g = grid as f64;
    let cell = |v: f64| ((v * g).floor().max(0.0) as usize).min(grid - 1);
    (cell(a.bbox.cy), cell(a.bbox.cx))
}

/// For every cell (row-major), the index of the annotation assigned to it.
/// Only the center cell of a box is positive; when two boxes share a cell
/// the first one listed keeps it.
pub fn assign_cells(gt: &[Annotation], grid: usize) -> Vec<Option<usize>> {
    let mut cells = vec![None; grid * grid];
    for (k, a) in gt.iter().enumerate() {
        let (i, j) = center_cell(a, grid);
        cells[i * grid + j].get_or_insert(k);
    }
    cells
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Loss of one image and its gradient with respect to the raw head outputs.
///
/// - objectness: `BCE(σ(z), y)` on every cell, `y = 1` on positive cells;
/// - box: `(σ(tx) − ox)² + (σ(ty) − oy)² + (tw − ln(wG))² + (th − ln(hG))²`
///   on positive cells, where `(ox, oy)` is the center offset inside the cell;
/// - class: softmax cross-entropy on positive cells.
pub fn detection_loss(preds: &Grid, gt: &[Annotation], w: &LossWeights) -> (f64, Grid) {
    let g = preds.side;
    let gf = g as f64;
    let classes = preds.classes();
    let cells = assign_cells(gt, g);
    let mut grad = Grid::zeros(g, preds.channels);
    let mut loss = 0.0;

    for i in 0..g {
        for j in 0..g {
            let z = preds.at(0, i, j);
            let assigned = cells[i * g + j];
            let (y, weight) = match assigned {
                Some(_) => (1.0, w.obj),
                None => (0.0, w.noobj),
            };
            if weight != 0.0 {
                loss += weight * (softplus(z) - y * z);
                let gi = grad.index(0, i, j);
                grad.data[gi] = weight * (sigmoid(z) - y);
            }
            let Some(k) = assigned else { continue };
            let a = &gt[k].bbox;

            if w.bbox != 0.0 {
                let targets = [
                    a.cx * gf - j as f64,
                    a.cy * gf - i as f64,
                    (a.w * gf).ln(),
                    (a.h * gf).ln(),
                ];
                for (t, &target) in targets.iter().enumerate() {
                    let ch = 1 + t;
                    let raw = preds.at(ch, i, j);
                    let gi = grad.index(ch, i, j);
                    if t < 2 {
                        let s = sigmoid(raw);
                        let d = s - target;
                        loss += w.bbox * d * d;
                        grad.data[gi] = w.bbox * 2.0 * d * s * (1.0 - s);
                    } else {
                        let d = raw - target;
                        loss += w.bbox * d * d;
                        grad.data[gi] = w.bbox * 2.0 * d;
                    }
                }
            }

            if w.class != 0.0 {
                let logits: Vec<f64> = (0..classes)
                    .map(|c| preds.at(BOX_CHANNELS + c, i, j))
                    .collect();
                let probs = softmax(&logits);
                let label = gt[k].class_id;
                // log-sum-exp form keeps the loss finite for confident logits
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                loss += w.class * (lse - logits[label]);
                for (c, p) in probs.iter().enumerate() {
                    let gi = grad.index(BOX_CHANNELS + c, i, j);
                    grad.data[gi] = w.class * (p - if c == label { 1.0 } else { 0.0 });
                }
            }
        }
    }
    (loss, grad)
}
