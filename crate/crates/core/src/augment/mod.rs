//! Dataset variants: geometric/photometric copies, Mosaic composites, CutMix
//! pastes and background-only ("negative") image injection.
//!
//! All label arithmetic is done in normalized corner coordinates. A box that
//! a transform pushes partly off the canvas is clipped; it is dropped when
//! the clipped remainder falls below [`SurvivalThresholds::min_visibility`]
//! of its transformed area.

mod cutmix;
mod geom;
mod mosaic;
mod variant;

pub use cutmix::{cutmix, cutmix_at, sample_placement, PatchPlacement, PATCH_FRAC_RANGE};
pub use geom::{apply_geom, apply_geom_with, GeomTransform};
pub use mosaic::{mosaic, mosaic_with, MosaicLayout};
pub use variant::{generate_variant, inject_negatives, AugConfig, Variant, VariantManifest};

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetError, NormBox};

/// Gray used for canvas regions with no source pixels.
pub const PAD_VALUE: u8 = 114;

/// Label survival rules for compositing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalThresholds {
    /// Minimum fraction of a box's transformed area that must stay on the
    /// canvas after clipping.
    pub min_visibility: f64,
    /// Minimum fraction of a donor box inside the CutMix patch for the box to
    /// be transferred.
    pub cutmix_transfer: f64,
    /// Fraction of a base box covered by the CutMix patch at which the box is
    /// removed.
    pub cutmix_occlusion: f64,
}

impl Default for SurvivalThresholds {
    fn default() -> Self {
        Self {
            min_visibility: 0.25,
            cutmix_transfer: 0.5,
            cutmix_occlusion: 0.5,
        }
    }
}

/// Boxes trimmed at the canvas edge and boxes removed outright.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxStats {
    pub clipped: usize,
    pub dropped: usize,
}

impl std::ops::AddAssign for BoxStats {
    fn add_assign(&mut self, rhs: Self) {
        self.clipped += rhs.clipped;
        self.dropped += rhs.dropped;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("mosaic needs exactly 4 images, got {0}")]
    MosaicInputs(usize),
    #[error("mosaic canvas side {0}px is below the 2px minimum")]
    CanvasTooSmall(u32),
    #[error("CutMix patch fraction {0} outside [0.1, 0.4]")]
    PatchFraction(f64),
    #[error("negative image `{0}` carries annotations")]
    AnnotatedNegative(String),
    #[error("requested {requested} negative images but only {available} were supplied")]
    NotEnoughNegatives { requested: usize, available: usize },
    #[error("raw dataset is empty")]
    EmptyInput,
    #[error("invalid augmentation config: {0}")]
    InvalidConfig(String),
}

/// Clips a transformed box (given by its corners, in the target frame) to
/// `[x1, x2] × [y1, y2]`. Returns `None` when less than `min_visibility` of
/// the box remains; the flag reports whether any trimming happened.
pub(crate) fn clip_with_visibility(
    bbox: NormBox,
    rect: (f64, f64, f64, f64),
    min_visibility: f64,
) -> Option<(NormBox, bool)> {
    let area = bbox.area();
    if area <= 0.0 {
        return None;
    }
    let (x1, y1, x2, y2) = rect;
    let clipped = bbox.clip_to(x1, y1, x2, y2)?;
    if clipped.area() < min_visibility * area {
        return None;
    }
    let (bx1, by1, bx2, by2) = bbox.corners();
    let trimmed = bx1 < x1 || by1 < y1 || bx2 > x2 || by2 > y2;
    Some((if trimmed { clipped } else { bbox }, trimmed))
}

/// Nearest-neighbour lookup of the source pixel covering normalized `(u, v)`.
#[inline]
pub(crate) fn source_index(u: f64, v: f64, w: u32, h: u32) -> Option<(u32, u32)> {
    let sx = (u * w as f64).floor();
    let sy = (v * h as f64).floor();
    (sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64).then_some((sx as u32, sy as u32))
}
