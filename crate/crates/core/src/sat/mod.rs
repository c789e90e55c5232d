//! Toy grid detector with self-adversarial training (SAT).
//!
//! A few small convolutions map an `S × S` grayscale image to a `G × G` grid
//! whose cells predict objectness, a box and class logits. Gradients are
//! computed by hand, for the parameters and for the input pixels; the input
//! gradient drives the adversarial pass, which moves every pixel by `ε` in
//! the direction that increases the loss before the ordinary update.

mod checkpoint;
mod loss;
mod net;
mod perturb;
mod shapes;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointHeader,
};
pub use loss::{assign_cells, center_cell, detection_loss, LossWeights};
pub use net::{Activation, ConvSpec, Grid, LossGrad, NetLayout, ToyDetector, BOX_CHANNELS};
pub use perturb::{sat_perturb, SatConfig, SatMode};
pub use shapes::{
    make_background, make_synthetic_shapes, size_range, ShapeKind, BACKGROUND_MAX,
    MAX_SYNTHETIC_CLASSES, SHAPE_MIN,
};
pub use train::{
    evaluate_map50, history_csv, map50_config, train, EpochRecord, ToySample, TrainConfig,
    TrainOutcome,
};

use std::path::PathBuf;

use crate::eval::EvalError;

#[derive(Debug, thiserror::Error)]
pub enum SatError {
    #[error("{what}: expected {expected} values, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        /// Parameters before the step that produced non-finite values.
        checkpoint: Box<ToyDetector>,
        history: Vec<EpochRecord>,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
