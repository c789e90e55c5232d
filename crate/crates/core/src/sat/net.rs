use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{detection_loss, LossWeights};
use super::SatError;
use crate::dataset::{Annotation, NormBox};
use crate::eval::{nms, Detection};
use crate::seed::rng_for;

/// Pixels in `[0, 1]` enter the first layer as `(x − INPUT_CENTER) · INPUT_GAIN`.
pub const INPUT_CENTER: f64 = 0.5;
pub const INPUT_GAIN: f64 = 2.0;

/// Channels per grid cell before the class logits: objectness, tx, ty, tw, th.
pub const BOX_CHANNELS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub activation: Activation,
}

impl ConvSpec {
    pub fn out_side(&self, side: usize) -> Option<usize> {
        if self.stride == 0 {
            return None;
        }
        (side + 2 * self.pad)
            .checked_sub(self.kernel)
            .map(|v| v / self.stride + 1)
    }

    pub fn weight_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_ch
    }
}

/// Shape of a detector: an `input_side²` single-channel image passes through
/// `layers`; the last layer emits `5 + classes` channels on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetLayout {
    pub input_side: usize,
    pub classes: usize,
    pub layers: Vec<ConvSpec>,
}

impl NetLayout {
    /// Two stride-2 tanh convolutions and a linear 3×3 head: a
    /// `side / 4` grid. `side` must be a multiple of 4.
    pub fn standard(side: usize, classes: usize) -> Self {
        Self::with_widths(side, classes, 16, 32)
    }

    pub fn with_widths(side: usize, classes: usize, c1: usize, c2: usize) -> Self {
        let conv = |in_ch, out_ch, kernel, stride, activation| ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad: kernel / 2,
            activation,
        };
        Self {
            input_side: side,
            classes,
            layers: vec![
                conv(1, c1, 5, 2, Activation::Tanh),
                conv(c1, c2, 3, 2, Activation::Tanh),
                conv(c2, BOX_CHANNELS + classes, 3, 1, Activation::Identity),
            ],
        }
    }

    /// One linear `kernel × kernel` convolution at stride 1; outputs are affine
    /// in the input pixels.
    pub fn linear(side: usize, classes: usize, kernel: usize) -> Self {
        Self {
            input_side: side,
            classes,
            layers: vec![ConvSpec {
                in_ch: 1,
                out_ch: BOX_CHANNELS + classes,
                kernel,
                stride: 1,
                pad: kernel / 2,
                activation: Activation::Identity,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), SatError> {
        let bad = |m: String| Err(SatError::InvalidConfig(m));
        if self.classes == 0 {
            return bad("detector needs at least one class".into());
        }
        let Some(first) = self.layers.first() else {
            return bad("detector has no layers".into());
        };
        if first.in_ch != 1 {
            return bad(format!("first layer takes {} channels, expected 1", first.in_ch));
        }
        let mut side = self.input_side;
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.kernel % 2 == 0 || l.out_ch == 0 {
                return bad(format!("layer {i}: kernel must be odd and channels positive"));
            }
            if i > 0 && self.layers[i - 1].out_ch != l.in_ch {
                return bad(format!(
                    "layer {i} takes {} channels but receives {}",
                    l.in_ch,
                    self.layers[i - 1].out_ch
                ));
            }
            side = match l.out_side(side) {
                Some(s) if s > 0 => s,
                _ => return bad(format!("layer {i}: spatial size underflow at side {side}")),
            };
        }
        let last = self.layers.last().expect("non-empty");
        if last.out_ch != BOX_CHANNELS + self.classes {
            return bad(format!(
                "head emits {} channels, expected {}",
                last.out_ch,
                BOX_CHANNELS + self.classes
            ));
        }
        Ok(())
    }

    /// Input side followed by each layer's output side.
    pub fn sides(&self) -> Vec<usize> {
        let mut out = vec![self.input_side];
        for l in &self.layers {
            let s = l.out_side(*out.last().expect("non-empty")).unwrap_or(0);
            out.push(s);
        }
        out
    }

    pub fn grid(&self) -> usize {
        *self.sides().last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvSpec::param_count).sum()
    }

    /// Start of each layer's weights in the flat parameter vector; the
    /// layer's biases follow its weights.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.param_count();
                o
            })
            .collect()
    }
}

/// Raw head output, channel-major: `data[(ch · G + i) · G + j]` for row `i`,
/// column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub side: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Grid {
    pub fn zeros(side: usize, channels: usize) -> Self {
        Self {
            side,
            channels,
            data: vec![0.0; side * side * channels],
        }
    }

    #[inline]
    pub fn index(&self, ch: usize, i: usize, j: usize) -> usize {
        (ch * self.side + i) * self.side + j
    }

    #[inline]
    pub fn at(&self, ch: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(ch, i, j)]
    }

    pub fn classes(&self) -> usize {
        self.channels - BOX_CHANNELS
    }

    pub fn objectness(&self, i: usize, j: usize) -> f64 {
        sigmoid(self.at(0, i, j))
    }

    /// Box predicted by cell `(i, j)`: center `((j + σ(tx)) / G, (i + σ(ty)) / G)`,
    /// size `(e^tw / G, e^th / G)`.
    pub fn decode_box(&self, i: usize, j: usize) -> NormBox {
        let g = self.side as f64;
        // cap the exponent so an untrained head cannot overflow
        let size = |t: f64| t.min(5.0).exp() / g;
        NormBox::new(
            (j as f64 + sigmoid(self.at(1, i, j))) / g,
            (i as f64 + sigmoid(self.at(2, i, j))) / g,
            size(self.at(3, i, j)),
            size(self.at(4, i, j)),
        )
    }

    pub fn class_probs(&self, i: usize, j: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes())
            .map(|c| self.at(BOX_CHANNELS + c, i, j))
            .collect();
        softmax(&logits)
    }

    /// One candidate per cell scoring at least `min_score`, where the score
    /// is objectness times the top class probability.
    pub fn detections(&self, image_id: &str, min_score: f64) -> Vec<Detection> {
        let mut out = Vec::new();
        for i in 0..self.side {
            for j in 0..self.side {
                let probs = self.class_probs(i, j);
                let (class_id, p) = probs
                    .iter()
                    .copied()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, p)| if p > best.1 { (c, p) } else { best });
                let score = self.objectness(i, j) * p;
                if score < min_score {
                    continue;
                }
                if let Some(bbox) = self.decode_box(i, j).clip_unit() {
                    out.push(Detection::new(image_id, class_id, score, bbox));
                }
            }
        }
        out
    }
}

/// Loss value with gradients for the parameters and, optionally, the input.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub params: Vec<f64>,
    pub input: Option<Vec<f64>>,
}

/// Grid detector with a flat parameter vector laid out per [`NetLayout::offsets`]:
/// each layer's weights in `(out, in, ky, kx)` order followed by its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDetector {
    pub layout: NetLayout,
    pub params: Vec<f64>,
}

impl ToyDetector {
    pub fn zeros(layout: NetLayout) -> Result<Self, SatError> {
        layout.validate()?;
        let params = vec![0.0; layout.param_count()];
        Ok(Self { layout, params })
    }

    /// Uniform fan-in scaled weights, zero biases, and a negative objectness
    /// bias so training starts from "no object anywhere".
    pub fn init(layout: NetLayout, seed: u64) -> Result<Self, SatError> {
        let mut det = Self::zeros(layout)?;
        let mut rng = rng_for(seed, &["toy-init"]);
        let offsets = det.layout.offsets();
        let n_layers = det.layout.layers.len();
        for (li, (l, &off)) in det.layout.layers.iter().zip(&offsets).enumerate() {
            let fan_in = (l.in_ch * l.kernel * l.kernel) as f64;
            let gain = if li + 1 == n_layers { 0.3 } else { 1.0 };
            let bound = gain * (3.0 / fan_in).sqrt();
            for w in &mut det.params[off..off + l.weight_count()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        let last = offsets[n_layers - 1] + det.layout.layers[n_layers - 1].weight_count();
        det.params[last] = -2.0;
        Ok(det)
    }

    pub fn from_params(layout: NetLayout, params: Vec<f64>) -> Result<Self, SatError> {
        layout.validate()?;
        if params.len() != layout.param_count() {
            return Err(SatError::Shape {
                what: "parameter vector",
                expected: layout.param_count(),
                actual: params.len(),
            });
        }
        Ok(Self { layout, params })
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn check_input(&self, img: &[f64]) -> Result<(), SatError> {
        let expected = self.layout.input_side * self.layout.input_side;
        if img.len() != expected {
            return Err(SatError::Shape {
                what: "input image",
                expected,
                actual: img.len(),
            });
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn activations(&self, img: &[f64]) -> Vec<Vec<f64>> {
        let sides = self.layout.sides();
        let mut acts = vec![img.iter().map(|v| (v - INPUT_CENTER) * INPUT_GAIN).collect::<Vec<_>>()];
        for (li, (l, off)) in self.layout.layers.iter().zip(self.layout.offsets()).enumerate() {
            let w = &self.params[off..off + l.weight_count()];
            let b = &self.params[off + l.weight_count()..off + l.param_count()];
            let mut out = conv_forward(&acts[li], sides[li], sides[li + 1], l, w, b);
            if l.activation != Activation::Identity {
                out.iter_mut().for_each(|v| *v = l.activation.apply(*v));
            }
            acts.push(out);
        }
        acts
    }

    pub fn forward(&self, img: &[f64]) -> Result<Grid, SatError> {
        self.check_input(img)?;
        let g = self.layout.grid();
        let data = self.activations(img).pop().expect("at least one layer");
        Ok(Grid {
            side: g,
            channels: BOX_CHANNELS + self.layout.classes,
            data,
        })
    }

    /// Detection loss on one image with analytic gradients.
    pub fn loss_and_grad(
        &self,
        img: &[f64],
        gt: &[Annotation],
        weights: &LossWeights,
        want_input_grad: bool,
    ) -> Result<LossGrad, SatError> {
        self.check_input(img)?;
        let acts = self.activations(img);
        let grid = Grid {
            side: self.layout.grid(),
            channels: BOX_CHANNELS + self.layout.classes,
            data: acts.last().expect("non-empty").clone(),
        };
        let (loss, grad_out) = detection_loss(&grid, gt, weights);

        let sides = self.layout.sides();
        let offsets = self.layout.offsets();
        let mut grad_params = vec![0.0; self.params.len()];
        let mut upstream = grad_out.data;
        let mut input_grad = None;
        for li in (0..self.layout.layers.len()).rev() {
            let l = &self.layout.layers[li];
            if l.activation != Activation::Identity {
                for (g, a) in upstream.iter_mut().zip(&acts[li + 1]) {
                    *g *= l.activation.derivative_from_output(*a);
                }
            }
            let off = offsets[li];
            let wc = l.weight_count();
            let (gw, gb) = grad_params[off..off + l.param_count()].split_at_mut(wc);
            let need_input = li > 0 || want_input_grad;
            let gin = conv_backward(
                &acts[li],
                sides[li],
                sides[li + 1],
                l,
                &self.params[off..off + wc],
                &upstream,
                gw,
                gb,
                need_input,
            );
            if li == 0 {
                input_grad = gin.map(|mut v| {
                    v.iter_mut().for_each(|g| *g *= INPUT_GAIN);
                    v
                });
            } else {
                upstream = gin.expect("requested");
            }
        }
        Ok(LossGrad {
            loss,
            params: grad_params,
            input: input_grad,
        })
    }

    /// Cell detections after class-wise NMS.
    pub fn predict(
        &self,
        img: &[f64],
        image_id: &str,
        min_score: f64,
        nms_iou: f64,
    ) -> Result<Vec<Detection>, SatError> {
        let grid = self.forward(img)?;
        Ok(nms(&grid.detections(image_id, min_score), nms_iou))
    }
}

/// Output positions `[lo, hi)` along one axis whose tap `k` lands inside
/// `[0, hin)`.
#[inline]
fn valid_range(hin: usize, hout: usize, stride: usize, pad: usize, k: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi = if hin + pad > k { ((hin + pad - k - 1) / stride + 1).min(hout) } else { 0 };
    (lo, hi.max(lo))
}

/// Patch matrix with one row per `(c, ky, kx)` tap and one column per output
/// position; padding taps stay zero.
fn im2col(x: &[f64], l: &ConvSpec, hin: usize, hout: usize) -> Vec<f64> {
    let (k, s, p) = (l.kernel, l.stride, l.pad);
    let n = hout * hout;
    let mut col = vec![0.0; l.in_ch * k * k * n];
    for c in 0..l.in_ch {
        let src = &x[c * hin * hin..(c + 1) * hin * hin];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(hin, hout, s, p, ky);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(hin, hout, s, p, kx);
                let r = (c * k + ky) * k + kx;
                let dst = &mut col[r * n..(r + 1) * n];
                for oy in y_lo..y_hi {
                    let row = &src[(oy * s + ky - p) * hin..];
                    for ox in x_lo..x_hi {
                        dst[oy * hout + ox] = row[ox * s + kx - p];
                    }
                }
            }
        }
    }
    col
}

/// Adds a patch-matrix gradient back onto the input positions it came from.
fn col2im(col: &[f64], l: &ConvSpec, hin: usize, hout: usize) -> Vec<f64> {
    let (k, s, p) = (l.kernel, l.stride, l.pad);
    let n = hout * hout;
    let mut x = vec![0.0; l.in_ch * hin * hin];
    for c in 0..l.in_ch {
        let dst = &mut x[c * hin * hin..(c + 1) * hin * hin];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(hin, hout, s, p, ky);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(hin, hout, s, p, kx);
                let r = (c * k + ky) * k + kx;
                let src = &col[r * n..(r + 1) * n];
                for oy in y_lo..y_hi {
                    let row = &mut dst[(oy * s + ky - p) * hin..];
                    for ox in x_lo..x_hi {
                        row[ox * s + kx - p] += src[oy * hout + ox];
                    }
                }
            }
        }
    }
    x
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent partial sums let the loop vectorize
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn conv_forward(x: &[f64], hin: usize, hout: usize, l: &ConvSpec, w: &[f64], b: &[f64]) -> Vec<f64> {
    let n = hout * hout;
    let taps = l.in_ch * l.kernel * l.kernel;
    let col = im2col(x, l, hin, hout);
    let mut out = vec![0.0; l.out_ch * n];
    for o in 0..l.out_ch {
        let dst = &mut out[o * n..(o + 1) * n];
        dst.iter_mut().for_each(|v| *v = b[o]);
        for r in 0..taps {
            axpy(dst, w[o * taps + r], &col[r * n..(r + 1) * n]);
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient when
/// `need_input` is set.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    hin: usize,
    hout: usize,
    l: &ConvSpec,
    w: &[f64],
    g: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Option<Vec<f64>> {
    let n = hout * hout;
    let taps = l.in_ch * l.kernel * l.kernel;
    let col = im2col(x, l, hin, hout);
    for o in 0..l.out_ch {
        let go = &g[o * n..(o + 1) * n];
        gb[o] += go.iter().sum::<f64>();
        for r in 0..taps {
            gw[o * taps + r] += dot(go, &col[r * n..(r + 1) * n]);
        }
    }
    if !need_input {
        return None;
    }
    let mut gcol = vec![0.0; taps * n];
    for o in 0..l.out_ch {
        let go = &g[o * n..(o + 1) * n];
        for r in 0..taps {
            axpy(&mut gcol[r * n..(r + 1) * n], w[o * taps + r], go);
        }
    }
    Some(col2im(&gcol, l, hin, hout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_give_half_objectness() {
        let det = ToyDetector::zeros(NetLayout::standard(32, 3)).unwrap();
        let grid = det.forward(&vec![0.3; 32 * 32]).unwrap();
        assert_eq!(grid.side, 8);
        assert_eq!(grid.channels, 8);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(grid.objectness(i, j), 0.5);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let det = ToyDetector::init(NetLayout::standard(32, 3), 11).unwrap();
        let img: Vec<f64> = (0..32 * 32).map(|i| (i % 17) as f64 / 17.0).collect();
        assert_eq!(det.forward(&img).unwrap(), det.forward(&img).unwrap());
        let again = ToyDetector::init(NetLayout::standard(32, 3), 11).unwrap();
        assert_eq!(det.params, again.params);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let det = ToyDetector::zeros(NetLayout::standard(32, 3)).unwrap();
        assert!(matches!(det.forward(&[0.0; 10]), Err(SatError::Shape { .. })));
    }

    #[test]
    fn layout_validation() {
        let mut l = NetLayout::standard(32, 3);
        l.layers[1].in_ch = 7;
        assert!(l.validate().is_err());
        assert!(NetLayout::standard(0, 3).validate().is_err());
        assert!(NetLayout::linear(8, 2, 3).validate().is_ok());
        assert_eq!(NetLayout::standard(32, 3).param_count(), 416 + 4640 + 2312);
    }

    #[test]
    fn stride_one_stack_is_translation_equivariant() {
        let layout = NetLayout {
            input_side: 16,
            classes: 1,
            layers: vec![
                ConvSpec {
                    in_ch: 1,
                    out_ch: 4,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    activation: Activation::Tanh,
                },
                ConvSpec {
                    in_ch: 4,
                    out_ch: 6,
                    kernel: 3,
                    stride: 1,
                    pad: 1,
                    activation: Activation::Identity,
                },
            ],
        };
        let det = ToyDetector::init(layout, 2).unwrap();
        let argmax = |img: &[f64]| {
            let g = det.forward(img).unwrap();
            let mut best = (0, 0, f64::NEG_INFINITY);
            for i in 3..13 {
                for j in 3..13 {
                    // deviation from the plain-background response
                    let v = (g.at(0, i, j) - g.at(0, 8, 1)).abs();
                    if v > best.2 {
                        best = (i, j, v);
                    }
                }
            }
            (best.0, best.1)
        };
        let mut img = vec![0.0; 256];
        for (y, x) in [(7, 7), (7, 8), (8, 7), (8, 8), (6, 7)] {
            img[y * 16 + x] = 1.0;
        }
        let mut shifted = vec![0.0; 256];
        for y in 0..16 {
            for x in 1..16 {
                shifted[y * 16 + x] = img[y * 16 + x - 1];
            }
        }
        let (i, j) = argmax(&img);
        assert_eq!(argmax(&shifted), (i, j + 1));
    }
}
