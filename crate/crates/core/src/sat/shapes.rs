use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SatError;
use crate::dataset::{Annotation, LabeledImage, NormBox, Provenance};
use crate::seed::rng_for;

/// Background pixels are drawn below this gray level.
pub const BACKGROUND_MAX: u8 = 80;
/// Shape pixels are at or above this gray level.
pub const SHAPE_MIN: u8 = 160;

/// One outline per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Square,
    Disk,
    Triangle,
    Cross,
    Ring,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 5] = [
        ShapeKind::Square,
        ShapeKind::Disk,
        ShapeKind::Triangle,
        ShapeKind::Cross,
        ShapeKind::Ring,
    ];

    /// Whether cell `(dx, dy)` of an `s × s` stamp is painted.
    pub fn covers(self, dx: usize, dy: usize, s: usize) -> bool {
        let sf = s as f64;
        let (px, py) = (dx as f64 + 0.5 - sf / 2.0, dy as f64 + 0.5 - sf / 2.0);
        let r2 = px * px + py * py;
        match self {
            ShapeKind::Square => true,
            ShapeKind::Disk => r2 <= (sf / 2.0) * (sf / 2.0),
            ShapeKind::Triangle => {
                // apex at the top, base on the bottom row
                let half = (dy as f64 + 1.0) / sf * (sf / 2.0);
                px.abs() <= half
            }
            ShapeKind::Cross => {
                let arm = (s / 3).max(1) as f64 / 2.0;
                px.abs() <= arm || py.abs() <= arm
            }
            ShapeKind::Ring => {
                let outer = sf / 2.0;
                let inner = outer - (s / 4).max(1) as f64;
                r2 <= outer * outer && r2 > inner * inner
            }
        }
    }
}

pub const MAX_SYNTHETIC_CLASSES: usize = ShapeKind::ALL.len();

/// Shape sizes for a `side`-pixel canvas, in pixels.
pub fn size_range(side: usize) -> (usize, usize) {
    let lo = (side * 3 / 16).max(4);
    (lo, (side * 3 / 8).max(lo))
}

fn noise_background(rng: &mut ChaCha8Rng, side: usize) -> Vec<u8> {
    let mut px = Vec::with_capacity(side * side * 3);
    for _ in 0..side * side {
        let v = rng.gen_range(0..BACKGROUND_MAX);
        px.extend([v; 3]);
    }
    px
}

/// `n` images of `side × side` gray noise with 1–3 bright, non-touching
/// shapes each. Class `k` is drawn as `ShapeKind::ALL[k]`; classes are
/// balanced across the whole set. Boxes are the painted pixel extents.
pub fn make_synthetic_shapes(
    n: usize,
    side: usize,
    classes: usize,
    seed: u64,
) -> Result<Vec<LabeledImage>, SatError> {
    if side < 16 {
        return Err(SatError::InvalidConfig(format!("synthetic side {side} below 16")));
    }
    if classes == 0 || classes > MAX_SYNTHETIC_CLASSES {
        return Err(SatError::InvalidConfig(format!(
            "synthetic shapes support 1..={MAX_SYNTHETIC_CLASSES} classes, got {classes}"
        )));
    }
    let mut rng = rng_for(seed, &["shapes"]);
    let counts: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
    let total: usize = counts.iter().sum();
    let mut labels: Vec<usize> = (0..total).map(|t| t % classes).collect();
    labels.shuffle(&mut rng);
    let (lo, hi) = size_range(side);

    let mut images = Vec::with_capacity(n);
    let mut next_label = labels.into_iter();
    for (i, &count) in counts.iter().enumerate() {
        let mut pixels = noise_background(&mut rng, side);
        let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
        let mut annotations = Vec::with_capacity(count);
        for _ in 0..count {
            let class_id = next_label.next().expect("one label per shape");
            let kind = ShapeKind::ALL[class_id];
            let mut spot = None;
            for _ in 0..200 {
                let s = rng.gen_range(lo..=hi);
                let x = rng.gen_range(0..=side - s);
                let y = rng.gen_range(0..=side - s);
                // one free pixel between shapes
                let clear = placed
                    .iter()
                    .all(|&(px, py, pw, ph)| x > px + pw || px > x + s || y > py + ph || py > y + s);
                if clear {
                    spot = Some((x, y, s));
                    break;
                }
            }
            let Some((x0, y0, s)) = spot else { continue };
            let base = rng.gen_range(180u8..=235);
            let (mut x1, mut y1, mut x2, mut y2) = (usize::MAX, usize::MAX, 0, 0);
            for dy in 0..s {
                for dx in 0..s {
                    let jitter = rng.gen_range(-20i16..=20);
                    if !kind.covers(dx, dy, s) {
                        continue;
                    }
                    let v = (base as i16 + jitter).clamp(SHAPE_MIN as i16, 255) as u8;
                    let (x, y) = (x0 + dx, y0 + dy);
                    let k = (y * side + x) * 3;
                    pixels[k..k + 3].copy_from_slice(&[v; 3]);
                    x1 = x1.min(x);
                    y1 = y1.min(y);
                    x2 = x2.max(x + 1);
                    y2 = y2.max(y + 1);
                }
            }
            placed.push((x0, y0, s, s));
            let sf = side as f64;
            annotations.push(Annotation::new(
                class_id,
                NormBox::from_corners(x1 as f64 / sf, y1 as f64 / sf, x2 as f64 / sf, y2 as f64 / sf),
            ));
        }
        images.push(LabeledImage {
            id: format!("shape{i:05}"),
            width: side as u32,
            height: side as u32,
            pixels,
            annotations,
            provenance: Provenance::Raw,
        });
    }
    Ok(images)
}

/// Noise-only images in the style of [`make_synthetic_shapes`].
pub fn make_background(n: usize, side: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = rng_for(seed, &["background"]);
    (0..n)
        .map(|i| LabeledImage {
            id: format!("bg{i:05}"),
            width: side as u32,
            height: side as u32,
            pixels: noise_background(&mut rng, side),
            annotations: Vec::new(),
            provenance: Provenance::Negative,
        })
        .collect()
}
