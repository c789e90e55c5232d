use super::{iou, score_order};
use crate::dataset::NormBox;

/// Outcome of greedy matching on one image and one class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchResult {
    /// TP flag per detection, in the caller's input order.
    pub det_tp: Vec<bool>,
    pub gt_matched: Vec<bool>,
}

/// Greedy score-ordered matching.
///
/// Detections (`(score, box)` pairs) are visited by descending score, ties in
/// input order. Each takes the still-unmatched GT box with the highest IoU,
/// provided that IoU reaches `iou_thr`; equal IoUs go to the lower GT index.
pub fn match_detections(gt: &[NormBox], dets: &[(f64, NormBox)], iou_thr: f64) -> MatchResult {
    let mut det_tp = vec![false; dets.len()];
    let mut gt_matched = vec![false; gt.len()];
    for di in score_order(dets, |d| d.0) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gt.iter().enumerate() {
            if gt_matched[gi] {
                continue;
            }
            let v = iou(&dets[di].1, g);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((gi, v));
            }
        }
        if let Some((gi, _)) = best {
            gt_matched[gi] = true;
            det_tp[di] = true;
        }
    }
    MatchResult { det_tp, gt_matched }
}
