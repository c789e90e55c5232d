use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{clip_with_visibility, source_index, BoxStats, SurvivalThresholds, PAD_VALUE};
use crate::dataset::{Annotation, LabeledImage, NormBox, Provenance};

/// Label-consistent image transform: optional horizontal flip, isotropic
/// scale about the image center, translation, then brightness/contrast.
///
/// In normalized coordinates a point maps as
/// `x' = 0.5 + scale·(x̃ − 0.5) + dx`, `y' = 0.5 + scale·(y − 0.5) + dy`,
/// where `x̃ = 1 − x` when flipped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomTransform {
    pub hflip: bool,
    pub scale: f64,
    /// `(dx, dy)` as fractions of width and height.
    pub translate: (f64, f64),
    /// Additive offset as a fraction of the full 0–255 range.
    pub brightness: f64,
    /// Multiplicative factor about mid-gray.
    pub contrast: f64,
}

impl GeomTransform {
    pub const IDENTITY: GeomTransform = GeomTransform {
        hflip: false,
        scale: 1.0,
        translate: (0.0, 0.0),
        brightness: 0.0,
        contrast: 1.0,
    };

    pub const SCALE_RANGE: (f64, f64) = (0.5, 1.5);
    pub const TRANSLATE_RANGE: (f64, f64) = (-0.2, 0.2);
    pub const BRIGHTNESS_RANGE: (f64, f64) = (-0.2, 0.2);
    pub const CONTRAST_RANGE: (f64, f64) = (0.7, 1.3);

    /// Draws every parameter uniformly from its range; flip with p = 0.5.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u = |rng: &mut R, (lo, hi): (f64, f64)| rng.gen_range(lo..=hi);
        let hflip = rng.gen_bool(0.5);
        let scale = u(rng, Self::SCALE_RANGE);
        let dx = u(rng, Self::TRANSLATE_RANGE);
        let dy = u(rng, Self::TRANSLATE_RANGE);
        let brightness = u(rng, Self::BRIGHTNESS_RANGE);
        let contrast = u(rng, Self::CONTRAST_RANGE);
        Self {
            hflip,
            scale,
            translate: (dx, dy),
            brightness,
            contrast,
        }
    }

    pub fn map_point(&self, x: f64, y: f64) -> (f64, f64) {
        let xf = if self.hflip { 1.0 - x } else { x };
        let pivot = (1.0 - self.scale) * 0.5;
        (
            self.scale * xf + pivot + self.translate.0,
            self.scale * y + pivot + self.translate.1,
        )
    }

    pub fn inverse_point(&self, x: f64, y: f64) -> (f64, f64) {
        let xf = (x - 0.5 - self.translate.0) / self.scale + 0.5;
        let sy = (y - 0.5 - self.translate.1) / self.scale + 0.5;
        (if self.hflip { 1.0 - xf } else { xf }, sy)
    }

    /// Maps a box in center form. The map has no rotation, so the image of a
    /// box is again an axis-aligned box.
    pub fn map_box(&self, b: &NormBox) -> NormBox {
        let (cx, cy) = self.map_point(b.cx, b.cy);
        NormBox::new(cx, cy, self.scale * b.w, self.scale * b.h)
    }

    #[inline]
    fn photometric(&self, v: u8) -> u8 {
        let out = (v as f64 - 127.5) * self.contrast + 127.5 + self.brightness * 255.0;
        out.round().clamp(0.0, 255.0) as u8
    }
}

/// Applies `t` with the default survival thresholds.
pub fn apply_geom(img: &LabeledImage, t: &GeomTransform) -> LabeledImage {
    apply_geom_with(img, t, &SurvivalThresholds::default()).0
}

pub fn apply_geom_with(
    img: &LabeledImage,
    t: &GeomTransform,
    thresholds: &SurvivalThresholds,
) -> (LabeledImage, BoxStats) {
    let (w, h) = (img.width, img.height);
    let mut pixels = Vec::with_capacity(img.pixels.len());
    for py in 0..h {
        let v = (py as f64 + 0.5) / h as f64;
        for px in 0..w {
            let u = (px as f64 + 0.5) / w as f64;
            let (su, sv) = t.inverse_point(u, v);
            match source_index(su, sv, w, h) {
                Some((sx, sy)) => {
                    let [r, g, b] = img.pixel(sx, sy);
                    pixels.extend([t.photometric(r), t.photometric(g), t.photometric(b)]);
                }
                None => pixels.extend([PAD_VALUE; 3]),
            }
        }
    }

    let mut stats = BoxStats::default();
    let mut annotations = Vec::with_capacity(img.annotations.len());
    for ann in &img.annotations {
        let mapped = t.map_box(&ann.bbox);
        match clip_with_visibility(mapped, (0.0, 0.0, 1.0, 1.0), thresholds.min_visibility) {
            Some((bbox, trimmed)) => {
                stats.clipped += trimmed as usize;
                annotations.push(Annotation::new(ann.class_id, bbox));
            }
            None => stats.dropped += 1,
        }
    }

    (
        LabeledImage {
            id: img.id.clone(),
            width: w,
            height: h,
            pixels,
            annotations,
            provenance: Provenance::Geom,
        },
        stats,
    )
}
