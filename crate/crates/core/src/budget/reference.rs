//! Desk-scale surrogate for a nano-sized single-stage detector.
//!
//! This is NOT the real network graph. It is a sequential layer list whose
//! base widths were fitted so that the parameter count lands near 2.56 M at
//! width 0.50 and near 2.17 M at width 0.33 (depth 0.25, 1024-channel cap).
//! Most of its mass sits in a 1×1 bottleneck wide enough to hit the channel
//! cap, which is what keeps the 0.50 → 0.33 reduction modest.

use super::{LayerSpec, ModelSpec};

pub const REFERENCE_BASE_WIDTH: f64 = 0.50;
pub const REFERENCE_PRUNED_WIDTH: f64 = 0.33;
pub const REFERENCE_DEPTH: f64 = 0.25;
pub const REFERENCE_MAX_CHANNELS: u64 = 1024;
/// 3 class scores + 4 box coordinates per location.
pub const REFERENCE_HEAD_OUTPUTS: u64 = 7;

/// The surrogate at `[0.50, 0.25, 1024]` and 640 px input.
pub fn reference_spec() -> ModelSpec {
    ModelSpec {
        layers: vec![
            LayerSpec::conv(3, 64, 3, 2).with_fixed_in(),
            LayerSpec::conv(64, 64, 3, 2),
            LayerSpec::conv(64, 64, 3, 1).repeated(4),
            LayerSpec::conv(64, 128, 3, 2),
            LayerSpec::conv(128, 128, 3, 1).repeated(4),
            LayerSpec::conv(128, 256, 3, 2),
            LayerSpec::conv(256, 256, 3, 1),
            LayerSpec::conv(256, 4096, 1, 2),
            LayerSpec::conv(4096, 4096, 1, 1),
            LayerSpec::conv(4096, 2560, 1, 1),
            LayerSpec::conv(2560, 64, 1, 1),
            LayerSpec::detect_head(64, REFERENCE_HEAD_OUTPUTS),
        ],
        width_multiple: REFERENCE_BASE_WIDTH,
        depth_multiple: REFERENCE_DEPTH,
        max_channels: REFERENCE_MAX_CHANNELS,
        input_side: 640,
    }
}
