//! Full-precision convolutional networks, generic over the float type so
//! the same code trains in `f32` and is gradient-checked in `f64`.

use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One stage of the convolutional feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureLayer {
    /// Stride-1 square convolution with zero padding.
    Conv {
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    /// Non-overlapping `size × size` max pooling.
    MaxPool { size: usize },
    Flatten,
}

/// Convolutional feature stack plus fully-connected widths. `fc[0]` is the
/// flattened feature width; each later entry adds one dense layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CnnSpec {
    pub input: Shape,
    pub features: Vec<FeatureLayer>,
    pub fc: Vec<usize>,
}

impl CnnSpec {
    /// Output shape of every feature layer, validating the stack.
    pub fn feature_shapes(&self) -> Result<Vec<Shape>> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.input.is_empty() {
            return bad("empty input shape".into());
        }
        let mut s = self.input;
        let mut shapes = Vec::with_capacity(self.features.len());
        for (i, layer) in self.features.iter().enumerate() {
            s = match *layer {
                FeatureLayer::Conv {
                    out_channels,
                    kernel,
                    padding,
                } => {
                    let (h, w) = (s.height + 2 * padding, s.width + 2 * padding);
                    if out_channels == 0 || kernel == 0 || kernel > h || kernel > w {
                        return bad(format!("convolution {i} does not fit a {}×{} input", s.height, s.width));
                    }
                    Shape::new(out_channels, h - kernel + 1, w - kernel + 1)
                }
                FeatureLayer::Relu => s,
                FeatureLayer::MaxPool { size } => {
                    if size == 0 || size > s.height || size > s.width {
                        return bad(format!("pooling {i} does not fit a {}×{} input", s.height, s.width));
                    }
                    Shape::new(s.channels, s.height / size, s.width / size)
                }
                FeatureLayer::Flatten => {
                    if i + 1 != self.features.len() {
                        return bad("flatten must be the last feature layer".into());
                    }
                    Shape::new(1, 1, s.len())
                }
            };
            shapes.push(s);
        }
        Ok(shapes)
    }

    pub fn flatten_width(&self) -> Result<usize> {
        Ok(self.feature_shapes()?.last().copied().unwrap_or(self.input).len())
    }

    pub fn validate(&self) -> Result<()> {
        let width = self.flatten_width()?;
        match self.fc.first() {
            None => Err(Error::InvalidParameter("no fully-connected widths".into())),
            Some(&w) if w != width => Err(Error::DimensionMismatch(format!(
                "flattened features have width {width}, first FC width is {w}"
            ))),
            Some(_) if self.fc.contains(&0) => Err(Error::InvalidParameter("zero FC width".into())),
            Some(_) => Ok(()),
        }
    }

    pub fn classes(&self) -> usize {
        *self.fc.last().expect("validated spec")
    }
}

/// Two 5×5 convolutions with pooling and a 400-120-84-10 head, for 28×28
/// grayscale digits.
pub fn lenet5() -> CnnSpec {
    use FeatureLayer::*;
    CnnSpec {
        input: Shape::new(1, 28, 28),
        features: vec![
            Conv {
                out_channels: 6,
                kernel: 5,
                padding: 2,
            },
            Relu,
            MaxPool { size: 2 },
            Conv {
                out_channels: 16,
                kernel: 5,
                padding: 0,
            },
            Relu,
            MaxPool { size: 2 },
            Flatten,
        ],
        fc: vec![400, 120, 84, 10],
    }
}

/// A small VGG-style stack of 3×3 convolutions for 32×32 colour images.
pub fn reduced_vgg() -> CnnSpec {
    use FeatureLayer::*;
    let conv = |c| Conv {
        out_channels: c,
        kernel: 3,
        padding: 1,
    };
    CnnSpec {
        input: Shape::new(3, 32, 32),
        features: vec![
            conv(16),
            Relu,
            MaxPool { size: 2 },
            conv(32),
            Relu,
            MaxPool { size: 2 },
            conv(32),
            Relu,
            MaxPool { size: 2 },
            Flatten,
        ],
        fc: vec![512, 128, 10],
    }
}

/// VGG-16 for 32×32 colour images: thirteen 3×3 convolutions in five
/// pooled blocks and a 512-512-10 classifier.
pub fn vgg16() -> CnnSpec {
    use FeatureLayer::*;
    let mut features = Vec::new();
    for block in [&[64, 64][..], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]] {
        for &c in block {
            features.push(Conv {
                out_channels: c,
                kernel: 3,
                padding: 1,
            });
            features.push(Relu);
        }
        features.push(MaxPool { size: 2 });
    }
    features.push(Flatten);
    CnnSpec {
        input: Shape::new(3, 32, 32),
        features,
        fc: vec![512, 512, 10],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Conv {
        input: Shape,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        w: usize,
        b: usize,
    },
    Relu,
    MaxPool {
        input: Shape,
        size: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
        w: usize,
        b: usize,
    },
}

/// A full-precision CNN: feature stack, then dense layers with ReLU between
/// them and linear logits at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct Cnn<T> {
    spec: CnnSpec,
    ops: Vec<Op>,
    feature_ops: usize,
    params: Vec<T>,
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("representable constant")
}

impl<T: Float + Send + Sync> Cnn<T> {
    fn plan(spec: &CnnSpec) -> Result<(Vec<Op>, usize, usize)> {
        spec.validate()?;
        let mut ops = Vec::new();
        let mut offset = 0;
        let mut s = spec.input;
        for layer in &spec.features {
            match *layer {
                FeatureLayer::Conv {
                    out_channels,
                    kernel,
                    padding,
                } => {
                    let nw = out_channels * s.channels * kernel * kernel;
                    ops.push(Op::Conv {
                        input: s,
                        out_channels,
                        kernel,
                        padding,
                        w: offset,
                        b: offset + nw,
                    });
                    offset += nw + out_channels;
                    let (h, w) = (s.height + 2 * padding, s.width + 2 * padding);
                    s = Shape::new(out_channels, h - kernel + 1, w - kernel + 1);
                }
                FeatureLayer::Relu => ops.push(Op::Relu),
                FeatureLayer::MaxPool { size } => {
                    ops.push(Op::MaxPool { input: s, size });
                    s = Shape::new(s.channels, s.height / size, s.width / size);
                }
                FeatureLayer::Flatten => s = Shape::new(1, 1, s.len()),
            }
        }
        let feature_ops = ops.len();
        for (i, w) in spec.fc.windows(2).enumerate() {
            ops.push(Op::Dense {
                inputs: w[0],
                outputs: w[1],
                w: offset,
                b: offset + w[0] * w[1],
            });
            offset += w[0] * w[1] + w[1];
            if i + 2 < spec.fc.len() {
                ops.push(Op::Relu);
            }
        }
        Ok((ops, feature_ops, offset))
    }

    /// Uniform ±1/√fan_in initialization of weights and biases.
    pub fn new(spec: CnnSpec, rng: &mut impl Rng) -> Result<Self> {
        let (ops, feature_ops, len) = Self::plan(&spec)?;
        let mut params = vec![T::zero(); len];
        for op in &ops {
            let (w, b, fan_in, nw, nb) = match *op {
                Op::Conv {
                    input,
                    out_channels,
                    kernel,
                    w,
                    b,
                    ..
                } => {
                    let fan = input.channels * kernel * kernel;
                    (w, b, fan, out_channels * fan, out_channels)
                }
                Op::Dense { inputs, outputs, w, b } => (w, b, inputs, inputs * outputs, outputs),
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            debug_assert_eq!(w + nw, b);
            for p in params[w..b + nb].iter_mut() {
                *p = cast(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            spec,
            ops,
            feature_ops,
            params,
        })
    }

    pub fn from_params(spec: CnnSpec, params: Vec<T>) -> Result<Self> {
        let (ops, feature_ops, len) = Self::plan(&spec)?;
        if params.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "spec needs {len} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            spec,
            ops,
            feature_ops,
            params,
        })
    }

    pub fn spec(&self) -> &CnnSpec {
        &self.spec
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Number of parameters in the convolutional stack; they come first.
    pub fn feature_param_count(&self) -> usize {
        self.ops[..self.feature_ops]
            .iter()
            .filter_map(|op| match *op {
                Op::Conv { b, out_channels, .. } => Some(b + out_channels),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn apply(&self, op: &Op, x: &[T]) -> Vec<T> {
        let p = &self.params;
        match *op {
            Op::Conv {
                input,
                out_channels,
                kernel,
                padding,
                w,
                b,
            } => {
                let padded = pad(x, input, padding);
                let (hp, wp) = (input.height + 2 * padding, input.width + 2 * padding);
                let (ho, wo) = (hp - kernel + 1, wp - kernel + 1);
                let mut out = vec![T::zero(); out_channels * ho * wo];
                for co in 0..out_channels {
                    let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
                    plane.iter_mut().for_each(|v| *v = p[b + co]);
                    for ci in 0..input.channels {
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wv = p[w + ((co * input.channels + ci) * kernel + ky) * kernel + kx];
                                for oy in 0..ho {
                                    let src = &padded[ci * hp * wp + (oy + ky) * wp + kx..][..wo];
                                    let dst = &mut plane[oy * wo..(oy + 1) * wo];
                                    for (d, &s) in dst.iter_mut().zip(src) {
                                        *d = *d + wv * s;
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            Op::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            Op::MaxPool { input, size } => {
                let (ho, wo) = (input.height / size, input.width / size);
                let mut out = Vec::with_capacity(input.channels * ho * wo);
                for c in 0..input.channels {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let (_, v) = pool_argmax(x, input, size, c, oy, ox);
                            out.push(v);
                        }
                    }
                }
                out
            }
            Op::Dense { inputs, outputs, w, b } => (0..outputs)
                .map(|r| {
                    let row = &p[w + r * inputs..w + (r + 1) * inputs];
                    row.iter().zip(x).fold(p[b + r], |acc, (&wv, &v)| acc + wv * v)
                })
                .collect(),
        }
    }

    /// Flattened output of the convolutional stack.
    pub fn features(&self, x: &[T]) -> Vec<T> {
        self.ops[..self.feature_ops]
            .iter()
            .fold(x.to_vec(), |a, op| self.apply(op, &a))
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.ops.iter().fold(x.to_vec(), |a, op| self.apply(op, &a))
    }

    pub fn predict(&self, x: &[T]) -> usize {
        let l = self.logits(x);
        let mut best = 0;
        for i in 1..l.len() {
            if l[i] > l[best] {
                best = i;
            }
        }
        best
    }

    /// Softmax cross-entropy of one sample.
    pub fn loss(&self, x: &[T], label: usize) -> T {
        cross_entropy(&self.logits(x), label).0
    }

    /// Adds the gradient of the sample loss into `grad`; returns the loss
    /// and whether the sample was classified correctly.
    pub fn accumulate_gradient(&self, x: &[T], label: usize, grad: &mut [T]) -> (T, bool) {
        assert_eq!(x.len(), self.spec.input.len());
        assert_eq!(grad.len(), self.params.len());
        let mut acts = Vec::with_capacity(self.ops.len() + 1);
        acts.push(x.to_vec());
        for op in &self.ops {
            let next = self.apply(op, acts.last().expect("input"));
            acts.push(next);
        }
        let logits = acts.last().expect("output");
        let (loss, mut delta) = cross_entropy(logits, label);
        let correct = {
            let mut best = 0;
            for i in 1..logits.len() {
                if logits[i] > logits[best] {
                    best = i;
                }
            }
            best == label
        };
        for (i, op) in self.ops.iter().enumerate().rev() {
            delta = self.backward(op, &acts[i], &acts[i + 1], &delta, grad, i > 0);
        }
        (loss, correct)
    }

    /// Backpropagates `dout` through `op`, accumulating parameter gradients.
    /// Returns the input gradient (empty when `need_input` is false).
    fn backward(&self, op: &Op, x: &[T], y: &[T], dout: &[T], grad: &mut [T], need_input: bool) -> Vec<T> {
        let p = &self.params;
        match *op {
            Op::Conv {
                input,
                out_channels,
                kernel,
                padding,
                w,
                b,
            } => {
                let padded = pad(x, input, padding);
                let (hp, wp) = (input.height + 2 * padding, input.width + 2 * padding);
                let (ho, wo) = (hp - kernel + 1, wp - kernel + 1);
                let mut dpad = if need_input { vec![T::zero(); padded.len()] } else { Vec::new() };
                for co in 0..out_channels {
                    let dplane = &dout[co * ho * wo..(co + 1) * ho * wo];
                    grad[b + co] = dplane.iter().fold(grad[b + co], |a, &d| a + d);
                    for ci in 0..input.channels {
                        for ky in 0..kernel {
                            for kx in 0..kernel {
                                let wi = w + ((co * input.channels + ci) * kernel + ky) * kernel + kx;
                                let mut gw = T::zero();
                                for oy in 0..ho {
                                    let start = ci * hp * wp + (oy + ky) * wp + kx;
                                    let drow = &dplane[oy * wo..(oy + 1) * wo];
                                    for (&d, &s) in drow.iter().zip(&padded[start..start + wo]) {
                                        gw = gw + d * s;
                                    }
                                    if need_input {
                                        let wv = p[wi];
                                        for (g, &d) in dpad[start..start + wo].iter_mut().zip(drow) {
                                            *g = *g + wv * d;
                                        }
                                    }
                                }
                                grad[wi] = grad[wi] + gw;
                            }
                        }
                    }
                }
                if need_input {
                    unpad(&dpad, input, padding)
                } else {
                    Vec::new()
                }
            }
            Op::Relu => dout
                .iter()
                .zip(y)
                .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                .collect(),
            Op::MaxPool { input, size } => {
                let (ho, wo) = (input.height / size, input.width / size);
                let mut dx = vec![T::zero(); x.len()];
                for c in 0..input.channels {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let (idx, _) = pool_argmax(x, input, size, c, oy, ox);
                            dx[idx] = dx[idx] + dout[(c * ho + oy) * wo + ox];
                        }
                    }
                }
                dx
            }
            Op::Dense { inputs, outputs, w, b } => {
                let mut dx = if need_input { vec![T::zero(); inputs] } else { Vec::new() };
                for r in 0..outputs {
                    let d = dout[r];
                    grad[b + r] = grad[b + r] + d;
                    let base = w + r * inputs;
                    for (g, &v) in grad[base..base + inputs].iter_mut().zip(x) {
                        *g = *g + d * v;
                    }
                    if need_input {
                        for (g, &wv) in dx.iter_mut().zip(&p[base..base + inputs]) {
                            *g = *g + wv * d;
                        }
                    }
                }
                dx
            }
        }
    }
}

fn pad<T: Float>(x: &[T], s: Shape, p: usize) -> Vec<T> {
    if p == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (s.height + 2 * p, s.width + 2 * p);
    let mut out = vec![T::zero(); s.channels * hp * wp];
    for c in 0..s.channels {
        for y in 0..s.height {
            let src = &x[(c * s.height + y) * s.width..][..s.width];
            out[c * hp * wp + (y + p) * wp + p..][..s.width].copy_from_slice(src);
        }
    }
    out
}

fn unpad<T: Float>(x: &[T], s: Shape, p: usize) -> Vec<T> {
    if p == 0 {
        return x.to_vec();
    }
    let (hp, wp) = (s.height + 2 * p, s.width + 2 * p);
    let mut out = Vec::with_capacity(s.len());
    for c in 0..s.channels {
        for y in 0..s.height {
            out.extend_from_slice(&x[c * hp * wp + (y + p) * wp + p..][..s.width]);
        }
    }
    out
}

/// Flat index and value of the first maximum in a pooling window.
fn pool_argmax<T: Float>(x: &[T], s: Shape, size: usize, c: usize, oy: usize, ox: usize) -> (usize, T) {
    let mut best = (c * s.height + oy * size) * s.width + ox * size;
    for dy in 0..size {
        for dx in 0..size {
            let i = (c * s.height + oy * size + dy) * s.width + ox * size + dx;
            if x[i] > x[best] {
                best = i;
            }
        }
    }
    (best, x[best])
}

/// Loss and logit gradient of softmax cross-entropy.
fn cross_entropy<T: Float>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let max = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    let loss = max + sum.ln() - logits[label];
    let grad = exps
        .iter()
        .enumerate()
        .map(|(k, &e)| e / sum - if k == label { T::one() } else { T::zero() })
        .collect();
    (loss, grad)
}

/// Result of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub parameters: usize,
    pub max_relative_error: f64,
}

/// Central-difference check of every parameter gradient of `net` on one
/// sample. The relative error of each entry is taken against the larger
/// magnitude of the two estimates, floored at 1e-6.
pub fn gradient_check(net: &Cnn<f64>, x: &[f64], label: usize, step: f64) -> GradientCheck {
    let mut analytic = vec![0.0; net.num_params()];
    net.accumulate_gradient(x, label, &mut analytic);
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + step;
        let up = probe.loss(x, label);
        probe.params[i] = orig - step;
        let down = probe.loss(x, label);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    GradientCheck {
        parameters: analytic.len(),
        max_relative_error: worst,
    }
}

/// A single 3×3 convolution on a 4×4 input whose four outputs are the
/// class logits: nine weights and one bias.
pub fn toy_conv_spec() -> CnnSpec {
    CnnSpec {
        input: Shape::new(1, 4, 4),
        features: vec![
            FeatureLayer::Conv {
                out_channels: 1,
                kernel: 3,
                padding: 0,
            },
            FeatureLayer::Flatten,
        ],
        fc: vec![4],
    }
}
