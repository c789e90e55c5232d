use rand::Rng;

use super::{clip_with_visibility, source_index, AugmentError, BoxStats, SurvivalThresholds};
use crate::dataset::{Annotation, LabeledImage, NormBox, Provenance};
use crate::seed::rng_for;

/// Where the quadrants of a mosaic meet, in canvas pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MosaicLayout {
    pub canvas: u32,
    pub center_x: u32,
    pub center_y: u32,
}

impl MosaicLayout {
    /// Picks the split point `canvas · (0.5 + U(−jitter, jitter))` per axis,
    /// kept at least one pixel away from the edges.
    pub fn sample(canvas: u32, center_jitter: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, &["mosaic-center"]);
        let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
            let off = if center_jitter > 0.0 {
                rng.gen_range(-center_jitter..center_jitter)
            } else {
                0.0
            };
            ((canvas as f64 * (0.5 + off)).floor() as u32).clamp(1, canvas - 1)
        };
        let center_x = pick(&mut rng);
        let center_y = pick(&mut rng);
        Self {
            canvas,
            center_x,
            center_y,
        }
    }

    /// Top-left corner (may be negative) at which quadrant `q` places its
    /// canvas-sized copy of the source; quadrants are TL, TR, BL, BR.
    pub fn placement(&self, q: usize) -> (i64, i64) {
        let s = self.canvas as i64;
        let (cx, cy) = (self.center_x as i64, self.center_y as i64);
        match q {
            0 => (cx - s, cy - s),
            1 => (cx, cy - s),
            2 => (cx - s, cy),
            _ => (cx, cy),
        }
    }

    /// Pixel rectangle `[x1, x2) × [y1, y2)` covered by quadrant `q`.
    pub fn quadrant(&self, q: usize) -> (u32, u32, u32, u32) {
        let (s, cx, cy) = (self.canvas, self.center_x, self.center_y);
        match q {
            0 => (0, 0, cx, cy),
            1 => (cx, 0, s, cy),
            2 => (0, cy, cx, s),
            _ => (cx, cy, s, s),
        }
    }

    fn quadrant_of(&self, x: u32, y: u32) -> usize {
        (x >= self.center_x) as usize + 2 * (y >= self.center_y) as usize
    }
}

/// Four-image mosaic with the default survival thresholds.
pub fn mosaic(
    imgs: &[LabeledImage],
    canvas: u32,
    center_jitter: f64,
    seed: u64,
) -> Result<LabeledImage, AugmentError> {
    if imgs.len() != 4 {
        return Err(AugmentError::MosaicInputs(imgs.len()));
    }
    if canvas < 2 {
        return Err(AugmentError::CanvasTooSmall(canvas));
    }
    if !(0.0..0.5).contains(&center_jitter) {
        return Err(AugmentError::InvalidConfig(format!(
            "mosaic center jitter {center_jitter} outside [0, 0.5)"
        )));
    }
    let layout = MosaicLayout::sample(canvas, center_jitter, seed);
    Ok(mosaic_with(imgs, &layout, &SurvivalThresholds::default())?.0)
}

/// Composes four images on a `canvas × canvas` raster.
///
/// Each input is stretched to the full canvas size and anchored with one
/// corner on the split point, so it covers its quadrant entirely and spills
/// off-canvas elsewhere. Boxes follow the same placement and are clipped to
/// their quadrant.
pub fn mosaic_with(
    imgs: &[LabeledImage],
    layout: &MosaicLayout,
    thresholds: &SurvivalThresholds,
) -> Result<(LabeledImage, BoxStats), AugmentError> {
    if imgs.len() != 4 {
        return Err(AugmentError::MosaicInputs(imgs.len()));
    }
    let s = layout.canvas;
    if s < 2 {
        return Err(AugmentError::CanvasTooSmall(s));
    }
    let sf = s as f64;
    let mut pixels = Vec::with_capacity(s as usize * s as usize * 3);
    for py in 0..s {
        for px in 0..s {
            let q = layout.quadrant_of(px, py);
            let (ox, oy) = layout.placement(q);
            let u = (px as i64 - ox) as f64 / sf + 0.5 / sf;
            let v = (py as i64 - oy) as f64 / sf + 0.5 / sf;
            let src = &imgs[q];
            let (sx, sy) = source_index(u, v, src.width, src.height)
                .expect("placed copy covers its quadrant");
            pixels.extend(src.pixel(sx, sy));
        }
    }

    let mut stats = BoxStats::default();
    let mut annotations = Vec::new();
    for (q, src) in imgs.iter().enumerate() {
        let (ox, oy) = layout.placement(q);
        let (qx1, qy1, qx2, qy2) = layout.quadrant(q);
        let rect = (qx1 as f64 / sf, qy1 as f64 / sf, qx2 as f64 / sf, qy2 as f64 / sf);
        for ann in &src.annotations {
            let (x1, y1, x2, y2) = ann.bbox.corners();
            let placed = NormBox::from_corners(
                ox as f64 / sf + x1,
                oy as f64 / sf + y1,
                ox as f64 / sf + x2,
                oy as f64 / sf + y2,
            );
            match clip_with_visibility(placed, rect, thresholds.min_visibility) {
                Some((bbox, trimmed)) => {
                    stats.clipped += trimmed as usize;
                    annotations.push(Annotation::new(ann.class_id, bbox));
                }
                None => stats.dropped += 1,
            }
        }
    }

    Ok((
        LabeledImage {
            id: format!("mosaic_{}", imgs[0].id),
            width: s,
            height: s,
            pixels,
            annotations,
            provenance: Provenance::Mosaic,
        },
        stats,
    ))
}
