//! Model-budget arithmetic: width/depth multipliers, parameter and FLOP
//! counts, serialized size, and a latency harness.
//!
//! A [`ModelSpec`] declares a sequential layer list in *base* channels; the
//! multiplier triple `(width_multiple, depth_multiple, max_channels)` turns it
//! into concrete channel and repeat counts.

mod bench;
mod executor;
mod reference;

pub use bench::{bench_latency, BenchError, LatencyStats};
pub use executor::SpecExecutor;
pub use reference::{reference_spec, REFERENCE_BASE_WIDTH, REFERENCE_PRUNED_WIDTH};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Channel counts are rounded up to a multiple of this.
pub const CHANNEL_DIVISOR: u64 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    DepthwiseConv,
    Linear,
    /// 1×1 prediction conv; its output width is the prediction vector and is
    /// never multiplied.
    DetectHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_ch: u64,
    pub out_ch: u64,
    #[serde(default = "one")]
    pub kernel: u64,
    #[serde(default = "one")]
    pub stride: u64,
    #[serde(default = "one")]
    pub repeats: u64,
    /// Input channels taken as-is (e.g. the 3 image channels).
    #[serde(default, skip_serializing_if = "is_false")]
    pub fixed_in: bool,
    /// Output channels taken as-is.
    #[serde(default, skip_serializing_if = "is_false")]
    pub fixed_out: bool,
}

fn one() -> u64 {
    1
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl LayerSpec {
    pub fn conv(in_ch: u64, out_ch: u64, kernel: u64, stride: u64) -> Self {
        Self {
            kind: LayerKind::Conv,
            in_ch,
            out_ch,
            kernel,
            stride,
            repeats: 1,
            fixed_in: false,
            fixed_out: false,
        }
    }

    pub fn depthwise(ch: u64, kernel: u64, stride: u64) -> Self {
        Self {
            kind: LayerKind::DepthwiseConv,
            ..Self::conv(ch, ch, kernel, stride)
        }
    }

    pub fn linear(in_ch: u64, out_ch: u64) -> Self {
        Self {
            kind: LayerKind::Linear,
            ..Self::conv(in_ch, out_ch, 1, 1)
        }
    }

    pub fn detect_head(in_ch: u64, outputs: u64) -> Self {
        Self {
            kind: LayerKind::DetectHead,
            fixed_out: true,
            ..Self::conv(in_ch, outputs, 1, 1)
        }
    }

    pub fn repeated(mut self, repeats: u64) -> Self {
        self.repeats = repeats;
        self
    }

    pub fn with_fixed_in(mut self) -> Self {
        self.fixed_in = true;
        self
    }

    pub fn with_fixed_out(mut self) -> Self {
        self.fixed_out = true;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub width_multiple: f64,
    pub depth_multiple: f64,
    pub max_channels: u64,
    pub input_side: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum BudgetError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("layer {layer}: stride {stride} exceeds the {side}px feature map")]
    SpatialUnderflow { layer: usize, side: u64, stride: u64 },
    #[error("cannot widen from {from} to {to}")]
    Widening { from: f64, to: f64 },
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid model spec JSON: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// `min(max_channels, ceil8(base_ch × width_multiple))`, at least one
/// divisor's worth of channels.
pub fn scale_channels(base_ch: u64, width_multiple: f64, max_channels: u64) -> u64 {
    let scaled = base_ch as f64 * width_multiple / CHANNEL_DIVISOR as f64;
    // 1e-9 absorbs products like 0.33 * 800 landing a hair above an integer
    let units = (scaled - 1e-9).ceil().max(1.0) as u64;
    (units * CHANNEL_DIVISOR).min(max_channels).max(1)
}

/// `max(1, round(repeats × depth_multiple))`.
pub fn scale_repeats(repeats: u64, depth_multiple: f64) -> u64 {
    ((repeats as f64 * depth_multiple).round() as u64).max(1)
}

/// One concrete layer instance after multipliers and repeat expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolvedLayer {
    pub kind: LayerKind,
    pub in_ch: u64,
    pub out_ch: u64,
    pub kernel: u64,
    pub stride: u64,
    pub in_side: u64,
    pub out_side: u64,
}

impl ResolvedLayer {
    pub fn weights(&self) -> u64 {
        let k2 = self.kernel * self.kernel;
        match self.kind {
            LayerKind::Conv | LayerKind::DetectHead => self.in_ch * self.out_ch * k2,
            LayerKind::DepthwiseConv => self.in_ch * k2,
            LayerKind::Linear => self.in_ch * self.out_ch,
        }
    }

    pub fn params(&self) -> u64 {
        self.weights() + self.out_ch
    }

    pub fn macs(&self) -> u64 {
        match self.kind {
            LayerKind::Linear => self.weights(),
            _ => self.weights() * self.out_side * self.out_side,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), BudgetError> {
        let bad = |m: String| Err(BudgetError::InvalidSpec(m));
        if !(self.width_multiple > 0.0 && self.width_multiple <= 1.0) {
            return bad(format!("width_multiple {} not in (0, 1]", self.width_multiple));
        }
        if !(self.depth_multiple > 0.0 && self.depth_multiple <= 1.0) {
            return bad(format!("depth_multiple {} not in (0, 1]", self.depth_multiple));
        }
        if self.max_channels < 8 {
            return bad(format!("max_channels {} < 8", self.max_channels));
        }
        if self.input_side == 0 {
            return bad("input_side must be positive".into());
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.kernel % 2 == 0 {
                return bad(format!("layer {i}: kernel {} must be odd", l.kernel));
            }
            if l.stride == 0 {
                return bad(format!("layer {i}: stride must be >= 1"));
            }
            if l.in_ch == 0 || l.out_ch == 0 {
                return bad(format!("layer {i}: channel counts must be >= 1"));
            }
            if l.kind == LayerKind::DepthwiseConv && l.in_ch != l.out_ch {
                return bad(format!("layer {i}: depthwise conv needs in_ch == out_ch"));
            }
        }
        Ok(())
    }

    fn channels(&self, base: u64, fixed: bool) -> u64 {
        if fixed {
            base
        } else {
            scale_channels(base, self.width_multiple, self.max_channels)
        }
    }

    /// Expands multipliers and repeats into concrete layer instances.
    ///
    /// A repeated layer runs its first instance with the declared stride and
    /// input width; later instances map `out → out` at stride 1. Linear
    /// layers sit after global pooling and do not touch the spatial size.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>, BudgetError> {
        self.validate()?;
        let mut side = self.input_side;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let out_fixed = l.fixed_out || l.kind == LayerKind::DetectHead;
            let out_ch = self.channels(l.out_ch, out_fixed);
            let in_ch = if l.kind == LayerKind::DepthwiseConv {
                out_ch
            } else {
                self.channels(l.in_ch, l.fixed_in)
            };
            for r in 0..scale_repeats(l.repeats, self.depth_multiple) {
                let (stride, cin) = if r == 0 { (l.stride, in_ch) } else { (1, out_ch) };
                let cin = if l.kind == LayerKind::DepthwiseConv { out_ch } else { cin };
                let in_side = side;
                if l.kind != LayerKind::Linear {
                    if side < stride {
                        return Err(BudgetError::SpatialUnderflow {
                            layer: i,
                            side,
                            stride,
                        });
                    }
                    side = side.div_ceil(stride);
                }
                out.push(ResolvedLayer {
                    kind: l.kind,
                    in_ch: cin,
                    out_ch,
                    kernel: l.kernel,
                    stride,
                    in_side,
                    out_side: side,
                });
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, BudgetError> {
        let text = fs::read_to_string(path).map_err(|source| BudgetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: ModelSpec = serde_json::from_str(&text).map_err(|source| BudgetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Total parameters: weights plus one bias per output channel.
pub fn count_params(spec: &ModelSpec) -> Result<u64, BudgetError> {
    Ok(spec.resolve()?.iter().map(ResolvedLayer::params).sum())
}

/// Multiply-accumulates of one forward pass at `input_side`.
pub fn count_macs(spec: &ModelSpec) -> Result<u64, BudgetError> {
    Ok(spec.resolve()?.iter().map(ResolvedLayer::macs).sum())
}

/// Floating-point operations of one forward pass, counted as 2 × MACs.
pub fn count_flops(spec: &ModelSpec) -> Result<u64, BudgetError> {
    Ok(2 * count_macs(spec)?)
}

/// Lowers the width multiplier. Widening is rejected.
pub fn prune(spec: &ModelSpec, new_width: f64) -> Result<ModelSpec, BudgetError> {
    if !(new_width > 0.0) {
        return Err(BudgetError::InvalidSpec(format!(
            "width_multiple {new_width} must be positive"
        )));
    }
    if new_width > spec.width_multiple {
        return Err(BudgetError::Widening {
            from: spec.width_multiple,
            to: new_width,
        });
    }
    let pruned = ModelSpec {
        width_multiple: new_width,
        ..spec.clone()
    };
    pruned.validate()?;
    Ok(pruned)
}

/// Default storage assumption: half-precision weights.
pub const DEFAULT_BYTES_PER_PARAM: f64 = 2.0;
/// Default fixed container overhead in MiB.
pub const DEFAULT_SIZE_OVERHEAD_MB: f64 = 0.35;

/// `params × bytes_per_param / 2^20 + overhead_mb`.
pub fn estimate_size_mb(params: u64, bytes_per_param: f64, overhead_mb: f64) -> f64 {
    params as f64 * bytes_per_param / (1u64 << 20) as f64 + overhead_mb
}

/// Efficiency columns of a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub params: u64,
    pub macs: u64,
    pub flops: u64,
    pub gflops: f64,
    pub size_mb: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<f64>,
    pub width_multiple: f64,
    pub depth_multiple: f64,
    pub max_channels: u64,
    pub input_side: u64,
    pub bytes_per_param: f64,
    pub size_overhead_mb: f64,
}

impl BudgetReport {
    pub fn for_spec(
        spec: &ModelSpec,
        bytes_per_param: f64,
        overhead_mb: f64,
    ) -> Result<Self, BudgetError> {
        let layers = spec.resolve()?;
        let params: u64 = layers.iter().map(ResolvedLayer::params).sum();
        let macs: u64 = layers.iter().map(ResolvedLayer::macs).sum();
        Ok(Self {
            params,
            macs,
            flops: 2 * macs,
            gflops: 2.0 * macs as f64 / 1e9,
            size_mb: estimate_size_mb(params, bytes_per_param, overhead_mb),
            latency_ms: None,
            width_multiple: spec.width_multiple,
            depth_multiple: spec.depth_multiple,
            max_channels: spec.max_channels,
            input_side: spec.input_side,
            bytes_per_param,
            size_overhead_mb: overhead_mb,
        })
    }
}
