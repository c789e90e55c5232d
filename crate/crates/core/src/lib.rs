//! Detection tooling for small aerial-litter datasets.
//!
//! The crate is organised around the data flowing through a detection
//! experiment:
//!
//! - [`dataset`]: YOLO text labels, splitting, on-disk layout and manifests.
//! - [`augment`]: geometric/photometric copies, Mosaic, CutMix and negative
//!   (background-only) image injection, combined into dataset variants.
//! - [`eval`]: IoU, NMS, greedy matching, interpolated AP and the mAP suite.
//! - [`budget`]: width/depth multiplier arithmetic, parameter/FLOP counting,
//!   size estimates and a latency harness.
//! - [`sat`]: a tiny differentiable grid detector trained with a two-pass
//!   self-adversarial step, plus a synthetic shapes generator.
//! - [`report`]: comparison tables and multi-seed aggregation of reports.

pub mod augment;
pub mod budget;
pub mod dataset;
pub mod eval;
pub mod report;
pub mod sat;
pub mod seed;

pub use dataset::{Annotation, LabeledImage, NormBox, Provenance};
pub use eval::Detection;
