use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugmentError, BoxStats, SurvivalThresholds};
use crate::dataset::{Annotation, LabeledImage, NormBox, Provenance};
use crate::seed::rng_for;

/// Allowed patch area as a fraction of the base canvas.
pub const PATCH_FRAC_RANGE: (f64, f64) = (0.1, 0.4);

/// A `width × height` rectangle cut from the donor at `(src_x, src_y)` and
/// pasted on the base at `(dest_x, dest_y)`. Donor coordinates refer to the
/// donor resampled onto the base grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlacement {
    pub dest_x: u32,
    pub dest_y: u32,
    pub src_x: u32,
    pub src_y: u32,
    pub width: u32,
    pub height: u32,
}

impl PatchPlacement {
    pub fn contains_dest(&self, x: u32, y: u32) -> bool {
        x >= self.dest_x
            && x < self.dest_x + self.width
            && y >= self.dest_y
            && y < self.dest_y + self.height
    }

    /// Donor pixel shown at base pixel `(x, y)`, or `None` outside the patch.
    pub fn donor_coords(&self, x: u32, y: u32, base: (u32, u32), donor: (u32, u32)) -> Option<(u32, u32)> {
        if !self.contains_dest(x, y) {
            return None;
        }
        let gx = x - self.dest_x + self.src_x;
        let gy = y - self.dest_y + self.src_y;
        Some((rescale(gx, base.0, donor.0), rescale(gy, base.1, donor.1)))
    }
}

// nearest-neighbour index map between grids; identity when sizes agree
fn rescale(i: u32, from: u32, to: u32) -> u32 {
    if from == to {
        i
    } else {
        ((i as u64 * to as u64 + to as u64 / 2) / from as u64).min(to as u64 - 1) as u32
    }
}

/// Patch of area ≈ `patch_frac` (same aspect as the base) at uniform
/// random source and destination positions.
pub fn sample_placement(
    width: u32,
    height: u32,
    patch_frac: f64,
    seed: u64,
) -> Result<PatchPlacement, AugmentError> {
    if !(PATCH_FRAC_RANGE.0..=PATCH_FRAC_RANGE.1).contains(&patch_frac) {
        return Err(AugmentError::PatchFraction(patch_frac));
    }
    let side = patch_frac.sqrt();
    let pw = ((width as f64 * side).round() as u32).clamp(1, width);
    let ph = ((height as f64 * side).round() as u32).clamp(1, height);
    let mut rng = rng_for(seed, &["cutmix-placement"]);
    Ok(PatchPlacement {
        dest_x: rng.gen_range(0..=width - pw),
        dest_y: rng.gen_range(0..=height - ph),
        src_x: rng.gen_range(0..=width - pw),
        src_y: rng.gen_range(0..=height - ph),
        width: pw,
        height: ph,
    })
}

/// CutMix with a seeded placement and default survival thresholds.
pub fn cutmix(
    base: &LabeledImage,
    donor: &LabeledImage,
    patch_frac: f64,
    seed: u64,
) -> Result<LabeledImage, AugmentError> {
    let placement = sample_placement(base.width, base.height, patch_frac, seed)?;
    Ok(cutmix_at(base, donor, &placement, &SurvivalThresholds::default()).0)
}

/// Pastes the donor patch described by `p` onto `base`.
///
/// Donor boxes with at least `cutmix_transfer` of their area inside the
/// source rectangle are clipped to it and moved by the patch offset. Base
/// boxes with at least `cutmix_occlusion` of their area under the patch are
/// removed; the rest are kept unchanged.
pub fn cutmix_at(
    base: &LabeledImage,
    donor: &LabeledImage,
    p: &PatchPlacement,
    thresholds: &SurvivalThresholds,
) -> (LabeledImage, BoxStats) {
    let (w, h) = (base.width, base.height);
    let mut pixels = base.pixels.clone();
    for y in p.dest_y..p.dest_y + p.height {
        for x in p.dest_x..p.dest_x + p.width {
            let (dx, dy) = p
                .donor_coords(x, y, (w, h), (donor.width, donor.height))
                .expect("inside patch");
            let i = (y as usize * w as usize + x as usize) * 3;
            pixels[i..i + 3].copy_from_slice(&donor.pixel(dx, dy));
        }
    }

    let (wf, hf) = (w as f64, h as f64);
    let dest = NormBox::from_corners(
        p.dest_x as f64 / wf,
        p.dest_y as f64 / hf,
        (p.dest_x + p.width) as f64 / wf,
        (p.dest_y + p.height) as f64 / hf,
    );
    let (sx1, sy1, sx2, sy2) = (
        p.src_x as f64 / wf,
        p.src_y as f64 / hf,
        (p.src_x + p.width) as f64 / wf,
        (p.src_y + p.height) as f64 / hf,
    );
    let (shift_x, shift_y) = (
        (p.dest_x as f64 - p.src_x as f64) / wf,
        (p.dest_y as f64 - p.src_y as f64) / hf,
    );

    let mut stats = BoxStats::default();
    let mut annotations = Vec::new();
    for ann in &base.annotations {
        let area = ann.bbox.area();
        if area > 0.0 && ann.bbox.intersection_area(&dest) >= thresholds.cutmix_occlusion * area {
            stats.dropped += 1;
        } else {
            annotations.push(*ann);
        }
    }
    for ann in &donor.annotations {
        let area = ann.bbox.area();
        let Some(inside) = ann.bbox.clip_to(sx1, sy1, sx2, sy2) else {
            continue;
        };
        if inside.area() < thresholds.cutmix_transfer * area {
            continue;
        }
        stats.clipped += (inside != ann.bbox) as usize;
        let (x1, y1, x2, y2) = inside.corners();
        annotations.push(Annotation::new(
            ann.class_id,
            NormBox::from_corners(x1 + shift_x, y1 + shift_y, x2 + shift_x, y2 + shift_y),
        ));
    }

    (
        LabeledImage {
            id: base.id.clone(),
            width: w,
            height: h,
            pixels,
            annotations,
            provenance: Provenance::Cutmix,
        },
        stats,
    )
}
