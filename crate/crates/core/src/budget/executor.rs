//! Naive CPU forward pass over a resolved [`ModelSpec`], used as the
//! benchmarked callable. Weights are seeded noise; only the arithmetic shape
//! matters for timing.

use rand::Rng;

use super::{BudgetError, LayerKind, ModelSpec, ResolvedLayer};
use crate::seed::rng_for;

pub struct SpecExecutor {
    layers: Vec<ResolvedLayer>,
    weights: Vec<Vec<f32>>,
    biases: Vec<Vec<f32>>,
    input: Vec<f32>,
    input_ch: usize,
}

impl SpecExecutor {
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self, BudgetError> {
        let layers = spec.resolve()?;
        if let Some(pos) = layers.iter().position(|l| l.kind == LayerKind::Linear) {
            if layers[pos..].iter().any(|l| l.kind != LayerKind::Linear) {
                return Err(BudgetError::InvalidSpec(
                    "spatial layers after a linear layer cannot be executed".into(),
                ));
            }
        }
        let mut rng = rng_for(seed, &["executor"]);
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for l in &layers {
            let fan_in = (l.weights() / l.out_ch.max(1)).max(1) as f32;
            let bound = (1.0 / fan_in).sqrt();
            weights.push(
                (0..l.weights())
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push((0..l.out_ch).map(|_| rng.gen_range(-0.1..0.1)).collect());
        }
        let input_ch = layers.first().map_or(3, |l| l.in_ch as usize);
        let side = spec.input_side as usize;
        let input = (0..input_ch * side * side)
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        Ok(Self {
            layers,
            weights,
            biases,
            input,
            input_ch,
        })
    }

    pub fn layers(&self) -> &[ResolvedLayer] {
        &self.layers
    }

    /// Runs one forward pass on the stored input and returns the output
    /// activations (channel-major).
    pub fn run(&self) -> Vec<f32> {
        let mut x = self.input.clone();
        let mut ch = self.input_ch;
        let mut pooled = false;
        for ((l, w), b) in self.layers.iter().zip(&self.weights).zip(&self.biases) {
            x = match l.kind {
                LayerKind::Conv | LayerKind::DetectHead => conv(&x, l, w, b, false),
                LayerKind::DepthwiseConv => conv(&x, l, w, b, true),
                LayerKind::Linear => {
                    if !pooled {
                        x = global_pool(&x, ch, l.in_side as usize);
                        pooled = true;
                    }
                    linear(&x, l, w, b)
                }
            };
            ch = l.out_ch as usize;
            if l.kind != LayerKind::DetectHead {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        x
    }
}

fn global_pool(x: &[f32], ch: usize, side: usize) -> Vec<f32> {
    let area = (side * side).max(1);
    (0..ch)
        .map(|c| x[c * area..(c + 1) * area].iter().sum::<f32>() / area as f32)
        .collect()
}

fn linear(x: &[f32], l: &ResolvedLayer, w: &[f32], b: &[f32]) -> Vec<f32> {
    let cin = l.in_ch as usize;
    (0..l.out_ch as usize)
        .map(|o| {
            let row = &w[o * cin..(o + 1) * cin];
            b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f32>()
        })
        .collect()
}

/// Zero-padded ("same") convolution, channel-major layout.
fn conv(x: &[f32], l: &ResolvedLayer, w: &[f32], b: &[f32], depthwise: bool) -> Vec<f32> {
    let (cin, cout) = (l.in_ch as usize, l.out_ch as usize);
    let (k, s) = (l.kernel as usize, l.stride as usize);
    let (hin, hout) = (l.in_side as usize, l.out_side as usize);
    let pad = k / 2;
    let mut out = vec![0.0f32; cout * hout * hout];
    for o in 0..cout {
        let plane = &mut out[o * hout * hout..(o + 1) * hout * hout];
        plane.iter_mut().for_each(|v| *v = b[o]);
        let inputs: Box<dyn Iterator<Item = usize>> = if depthwise {
            Box::new(std::iter::once(o))
        } else {
            Box::new(0..cin)
        };
        for c in inputs {
            let src = &x[c * hin * hin..(c + 1) * hin * hin];
            let kbase = if depthwise { o * k * k } else { (o * cin + c) * k * k };
            let kern = &w[kbase..kbase + k * k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = kern[ky * k + kx];
                    for oy in 0..hout {
                        let iy = (oy * s + ky) as isize - pad as isize;
                        if iy < 0 || iy >= hin as isize {
                            continue;
                        }
                        let row = &src[iy as usize * hin..(iy as usize + 1) * hin];
                        let dst = &mut plane[oy * hout..(oy + 1) * hout];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - pad as isize;
                            if ix >= 0 && (ix as usize) < hin {
                                *d += wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
