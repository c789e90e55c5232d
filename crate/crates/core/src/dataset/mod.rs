//! Dataset model, YOLO text labels, splitting and on-disk layout.
//!
//! Boxes are always normalized center-format ([`NormBox`]); pixel rasters are
//! row-major interleaved RGB8.

mod descriptor;
mod io;
mod labels;
mod split;

pub use descriptor::{DatasetDescriptor, DEFAULT_CLASSES};
pub use io::{read_dataset, read_label_tree, write_dataset, LoadedDataset, Manifest, ManifestEntry};
pub use labels::{format_labels, parse_label_file, LabelError, LabelErrorKind};
pub use split::{split_dataset, DatasetSplit, SplitName, SplitRatio};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

/// Slack allowed on box extents after floating-point transforms.
pub const EXTENT_TOLERANCE: f64 = 1e-6;

/// Normalized center-format bounding box. All four fields are fractions of the
/// image side they refer to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl NormBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// Builds a box from corner coordinates `(x1, y1)`–`(x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        }
    }

    /// Corner coordinates `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Area of the overlap with `other`; zero when disjoint.
    pub fn intersection_area(&self, other: &NormBox) -> f64 {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih
    }

    /// Intersection with the rectangle `[x1, x2] × [y1, y2]`, or `None` when
    /// nothing with positive area remains.
    pub fn clip_to(&self, x1: f64, y1: f64, x2: f64, y2: f64) -> Option<NormBox> {
        let (bx1, by1, bx2, by2) = self.corners();
        let nx1 = bx1.max(x1);
        let ny1 = by1.max(y1);
        let nx2 = bx2.min(x2);
        let ny2 = by2.min(y2);
        (nx2 > nx1 && ny2 > ny1).then(|| NormBox::from_corners(nx1, ny1, nx2, ny2))
    }

    /// Clip to the unit square.
    pub fn clip_unit(&self) -> Option<NormBox> {
        self.clip_to(0.0, 0.0, 1.0, 1.0)
    }

    /// True when every field is in `[0, 1]`, the size is positive and the
    /// extent lies inside the image up to [`EXTENT_TOLERANCE`].
    pub fn is_valid(&self) -> bool {
        let fields = [self.cx, self.cy, self.w, self.h];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return false;
        }
        let (x1, y1, x2, y2) = self.corners();
        self.w > 0.0
            && self.h > 0.0
            && x1 >= -EXTENT_TOLERANCE
            && y1 >= -EXTENT_TOLERANCE
            && x2 <= 1.0 + EXTENT_TOLERANCE
            && y2 <= 1.0 + EXTENT_TOLERANCE
    }

    /// The value the box takes after a write/read cycle through a label file.
    pub fn quantized(&self) -> NormBox {
        let q = |v: f64| -> f64 { format!("{v:.6}").parse().unwrap_or(v) };
        NormBox::new(q(self.cx), q(self.cy), q(self.w), q(self.h))
    }
}

/// A class-labelled box attached to an image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: NormBox,
}

impl Annotation {
    pub const fn new(class_id: usize, bbox: NormBox) -> Self {
        Self { class_id, bbox }
    }
}

/// Where an image came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Negative,
    Geom,
    Mosaic,
    Cutmix,
}

impl Provenance {
    pub const ALL: [Provenance; 5] = [
        Provenance::Raw,
        Provenance::Negative,
        Provenance::Geom,
        Provenance::Mosaic,
        Provenance::Cutmix,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Raw => "raw",
            Provenance::Negative => "negative",
            Provenance::Geom => "geom",
            Provenance::Mosaic => "mosaic",
            Provenance::Cutmix => "cutmix",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Pixels plus annotations. An empty annotation list marks a background image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    /// Row-major RGB8, `width * height * 3` bytes.
    pub pixels: Vec<u8>,
    pub annotations: Vec<Annotation>,
    pub provenance: Provenance,
}

impl LabeledImage {
    pub fn new(
        id: impl Into<String>,
        width: u32,
        height: u32,
        pixels: Vec<u8>,
        annotations: Vec<Annotation>,
        provenance: Provenance,
    ) -> Result<Self, DatasetError> {
        let id = id.into();
        if width == 0 || height == 0 {
            return Err(DatasetError::EmptyRaster(id));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(DatasetError::RasterSize {
                id,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            id,
            width,
            height,
            pixels,
            annotations,
            provenance,
        })
    }

    /// A uniformly filled image with no annotations.
    pub fn filled(id: impl Into<String>, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            id: id.into(),
            width,
            height,
            pixels,
            annotations: Vec::new(),
            provenance: Provenance::Raw,
        }
    }

    pub fn is_negative(&self) -> bool {
        self.annotations.is_empty()
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Checks raster length, class ids and box validity.
    pub fn validate(&self, class_count: usize) -> Result<(), DatasetError> {
        let expected = self.width as usize * self.height as usize * 3;
        if self.pixels.len() != expected {
            return Err(DatasetError::RasterSize {
                id: self.id.clone(),
                expected,
                actual: self.pixels.len(),
            });
        }
        for ann in &self.annotations {
            if ann.class_id >= class_count {
                return Err(DatasetError::ClassOutOfRange {
                    id: self.id.clone(),
                    class_id: ann.class_id,
                    class_count,
                });
            }
            if !ann.bbox.is_valid() {
                return Err(DatasetError::InvalidBox {
                    id: self.id.clone(),
                    bbox: ann.bbox,
                });
            }
        }
        if self.provenance == Provenance::Negative && !self.annotations.is_empty() {
            return Err(DatasetError::AnnotatedNegative(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Label {
        path: PathBuf,
        #[source]
        source: LabelError,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("image `{0}` has an empty raster")]
    EmptyRaster(String),
    #[error("image `{id}`: raster has {actual} bytes, expected {expected}")]
    RasterSize {
        id: String,
        expected: usize,
        actual: usize,
    },
    #[error("image `{id}`: class id {class_id} out of range for {class_count} classes")]
    ClassOutOfRange {
        id: String,
        class_id: usize,
        class_count: usize,
    },
    #[error("image `{id}`: invalid box {bbox:?}")]
    InvalidBox { id: String, bbox: NormBox },
    #[error("negative image `{0}` carries annotations")]
    AnnotatedNegative(String),
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("split references unknown image id `{0}`")]
    UnknownId(String),
    #[error("image `{0}` is not assigned to any split")]
    Unassigned(String),
    #[error("invalid split ratio: {0}")]
    InvalidRatio(String),
    #[error("{0}")]
    Layout(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corners_round_trip() {
        let b = NormBox::new(0.3, 0.4, 0.2, 0.1);
        let (x1, y1, x2, y2) = b.corners();
        let c = NormBox::from_corners(x1, y1, x2, y2);
        assert!((b.cx - c.cx).abs() < 1e-15 && (b.w - c.w).abs() < 1e-15);
    }

    #[test]
    fn clip_unit_trims_overhang() {
        let b = NormBox::new(0.9, 0.5, 0.4, 0.2);
        let c = b.clip_unit().unwrap();
        let (x1, _, x2, _) = c.corners();
        assert!((x1 - 0.7).abs() < 1e-12);
        assert!((x2 - 1.0).abs() < 1e-12);
        assert!(NormBox::new(1.5, 0.5, 0.2, 0.2).clip_unit().is_none());
    }

    #[test]
    fn validity_checks_extent() {
        assert!(NormBox::new(0.5, 0.5, 1.0, 1.0).is_valid());
        assert!(!NormBox::new(0.9, 0.9, 0.4, 0.1).is_valid());
        assert!(!NormBox::new(0.5, 0.5, 0.0, 0.1).is_valid());
    }

    #[test]
    fn raster_length_checked() {
        let err = LabeledImage::new("a", 2, 2, vec![0; 11], vec![], Provenance::Raw).unwrap_err();
        assert!(matches!(err, DatasetError::RasterSize { expected: 12, .. }));
    }

    #[test]
    fn annotated_negative_is_invalid() {
        let mut img = LabeledImage::filled("n", 4, 4, [1, 2, 3]);
        img.provenance = Provenance::Negative;
        img.annotations.push(Annotation::new(0, NormBox::new(0.5, 0.5, 0.2, 0.2)));
        assert!(matches!(img.validate(3), Err(DatasetError::AnnotatedNegative(_))));
    }
}
