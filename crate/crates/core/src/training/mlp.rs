//! Teacher-student training of binarized σ(−x) networks.

use rayon::prelude::*;

use super::{binarize, classify, split_indices, Adam, EpochMetrics, HyperParams, TeacherLayer};
use crate::binary::TrainedParameters;
use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::{Seeds, Stream};

/// Samples per gradient work item. Fixed so the floating-point reduction
/// order, and therefore the trained parameters, do not depend on the
/// worker count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// Binarized snapshot of the selected epoch.
    pub parameters: TrainedParameters,
    pub teacher: Vec<TeacherLayer>,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept (0 means the initialization).
    pub best_epoch: usize,
}

/// Flat parameter layout: for each layer the `out × in` weights, then the
/// `out` biases.
#[derive(Debug, Clone)]
struct Layout {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(dims: &[usize]) -> Self {
        let mut offsets = Vec::new();
        let mut len = 0;
        for w in dims.windows(2) {
            offsets.push(len);
            len += w[0] * w[1] + w[1];
        }
        Self {
            dims: dims.to_vec(),
            offsets,
            len,
        }
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// (weights, biases) ranges of layer `l`.
    fn ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let w0 = self.offsets[l];
        (w0..w0 + i * o, w0 + i * o..w0 + i * o + o)
    }

    fn pack(&self, teacher: &[TeacherLayer]) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.len);
        for t in teacher {
            flat.extend_from_slice(&t.w);
            flat.extend_from_slice(&t.b);
        }
        flat
    }

    fn unpack(&self, flat: &[f64]) -> Vec<TeacherLayer> {
        (0..self.layers())
            .map(|l| {
                let (w, b) = self.ranges(l);
                TeacherLayer {
                    inputs: self.dims[l],
                    outputs: self.dims[l + 1],
                    w: flat[w].to_vec(),
                    b: flat[b].to_vec(),
                }
            })
            .collect()
    }
}

/// σ(−(W·x + B)) through every layer, summing in column order then adding
/// the bias, exactly as the ideal crossbar does.
pub fn student_forward(params: &TrainedParameters, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in &params.layers {
        a = (0..layer.outputs())
            .map(|r| {
                let mut s = 0.0;
                for (&w, &v) in layer.weights.row(r).iter().zip(&a) {
                    s += f64::from(w) * v;
                }
                s += f64::from(layer.biases[r]);
                1.0 / (1.0 + s.exp())
            })
            .collect();
    }
    a
}

/// Forward pass on flat ±1 student parameters, keeping every activation.
fn forward_cached(layout: &Layout, student: &[f64], x: &[f32]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layout.dims.len());
    acts.push(x.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
    for l in 0..layout.layers() {
        let (wr, br) = layout.ranges(l);
        let (w, b) = (&student[wr], &student[br]);
        let inp = layout.dims[l];
        let prev = &acts[l];
        let next: Vec<f64> = b
            .iter()
            .enumerate()
            .map(|(r, &bias)| {
                let mut s = 0.0;
                for (&wv, &v) in w[r * inp..(r + 1) * inp].iter().zip(prev) {
                    s += wv * v;
                }
                s += bias;
                1.0 / (1.0 + s.exp())
            })
            .collect();
        acts.push(next);
    }
    acts
}

/// Adds one sample's loss gradient into `grad`; returns (loss, correct).
fn accumulate_sample(
    layout: &Layout,
    student: &[f64],
    x: &[f32],
    label: usize,
    temperature: f64,
    grad: &mut [f64],
) -> (f64, bool) {
    let acts = forward_cached(layout, student, x);
    let out = acts.last().expect("at least one layer");
    let correct = classify(out) == label;

    // Gradient with respect to the last layer's pre-activation y, where
    // o = σ(−y) so do/dy = −o(1 − o).
    let (loss, mut delta) = if out.len() == 1 {
        let o = out[0].clamp(1e-12, 1.0 - 1e-12);
        let t = label as f64;
        let loss = -(t * o.ln() + (1.0 - t) * (1.0 - o).ln());
        (loss, vec![t - out[0]])
    } else {
        let logits: Vec<f64> = out.iter().map(|&o| temperature * o).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        let loss = max + sum.ln() - logits[label];
        let delta = out
            .iter()
            .zip(&logits)
            .enumerate()
            .map(|(k, (&o, &z))| {
                let p = (z - max).exp() / sum;
                let dl_do = temperature * (p - f64::from(u8::from(k == label)));
                -dl_do * o * (1.0 - o)
            })
            .collect();
        (loss, delta)
    };

    for l in (0..layout.layers()).rev() {
        let (wr, br) = layout.ranges(l);
        let inp = layout.dims[l];
        let prev = &acts[l];
        for (r, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, &a) in grad[wr.start + r * inp..wr.start + (r + 1) * inp].iter_mut().zip(prev) {
                *g += d * a;
            }
            grad[br.start + r] += d;
        }
        if l > 0 {
            let w = &student[wr];
            let mut da = vec![0.0; inp];
            for (r, &d) in delta.iter().enumerate() {
                for (acc, &wv) in da.iter_mut().zip(&w[r * inp..(r + 1) * inp]) {
                    *acc += wv * d;
                }
            }
            delta = da.iter().zip(prev).map(|(&g, &a)| -g * a * (1.0 - a)).collect();
        }
    }
    (loss, correct)
}

fn student_of(flat: &[f64]) -> Vec<f64> {
    flat.iter().map(|&w| f64::from(super::binarize_value(w))).collect()
}

fn accuracy(layout: &Layout, student: &[f64], set: &FeatureSet, indices: Option<&[usize]>) -> f64 {
    let n = indices.map_or(set.len(), <[usize]>::len);
    if n == 0 {
        return 0.0;
    }
    let correct: usize = (0..n)
        .into_par_iter()
        .map(|k| {
            let i = indices.map_or(k, |ix| ix[k]);
            let acts = forward_cached(layout, student, set.sample(i));
            usize::from(classify(acts.last().expect("layer")) == set.label(i) as usize)
        })
        .sum();
    correct as f64 / n as f64
}

fn check_inputs(train: &FeatureSet, test: Option<&FeatureSet>, dims: &[usize], hp: &HyperParams) -> Result<()> {
    hp.validate()?;
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidParameter(format!("invalid layer widths {dims:?}")));
    }
    for set in std::iter::once(train).chain(test) {
        if set.dim() != dims[0] {
            return Err(Error::DimensionMismatch(format!(
                "network takes {} inputs, data has {}",
                dims[0],
                set.dim()
            )));
        }
        let classes = dims[dims.len() - 1].max(2);
        if let Some(&bad) = set.labels().iter().find(|&&l| l as usize >= classes) {
            return Err(Error::InvalidInput(format!("label {bad} exceeds {classes} classes")));
        }
    }
    Ok(())
}

/// Trains a binarized network of widths `dims` on `train`.
///
/// A held-out share of `train` (see [`HyperParams::validation_fraction`])
/// picks the epoch whose binarized parameters are returned; `test` is only
/// logged.
pub fn train_mlp(
    train: &FeatureSet,
    test: Option<&FeatureSet>,
    dims: &[usize],
    hp: &HyperParams,
    seeds: &Seeds,
) -> Result<TrainingReport> {
    check_inputs(train, test, dims, hp)?;
    let layout = Layout::new(dims);
    let mut init_rng = seeds.stream(Stream::Init);
    let teacher: Vec<TeacherLayer> = dims
        .windows(2)
        .map(|w| TeacherLayer::random(&mut init_rng, w[0], w[1], hp.init_scale))
        .collect();
    let mut theta = layout.pack(&teacher);
    let (mut train_idx, val_idx) = split_indices(&mut seeds.stream(Stream::Data), train.len(), hp.validation_fraction);

    let steps_per_epoch = train_idx.len().div_ceil(hp.batch_size);
    let total_steps = hp.epochs * steps_per_epoch;
    let mut opt = Adam::<f64>::new(layout.len);
    let mut shuffle = seeds.stream(Stream::Shuffle);
    let mut history = Vec::with_capacity(hp.epochs);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut step = 0;

    for epoch in 1..=hp.epochs {
        use rand::seq::SliceRandom;
        train_idx.shuffle(&mut shuffle);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in train_idx.chunks(hp.batch_size) {
            let student = student_of(&theta);
            let partials: Vec<(Vec<f64>, f64, usize)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut g = vec![0.0; layout.len];
                    let (mut l, mut c) = (0.0, 0);
                    for &i in chunk {
                        let (li, ok) = accumulate_sample(
                            &layout,
                            &student,
                            train.sample(i),
                            train.label(i) as usize,
                            hp.temperature,
                            &mut g,
                        );
                        l += li;
                        c += usize::from(ok);
                    }
                    (g, l, c)
                })
                .collect();
            let mut grad = vec![0.0; layout.len];
            let mut batch_loss = 0.0;
            for (g, l, c) in partials {
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
                batch_loss += l;
                correct += c;
            }
            if !batch_loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    step,
                    loss: batch_loss / batch.len() as f64,
                });
            }
            loss_sum += batch_loss;
            let scale = 1.0 / batch.len() as f64;
            for (g, &w) in grad.iter_mut().zip(&theta) {
                // Straight-through estimator, cut off outside [−1, 1].
                *g = if w.abs() <= 1.0 { *g * scale } else { 0.0 };
            }
            let lr = hp.schedule.rate(hp.learning_rate, step, total_steps);
            opt.step(&mut theta, &grad, lr);
            for w in theta.iter_mut() {
                *w = w.clamp(-1.0, 1.0);
            }
            assert!(
                theta.iter().all(|w| (-1.0..=1.0).contains(w)),
                "teacher left [-1, 1] after step {step}"
            );
            step += 1;
        }

        let student = student_of(&theta);
        let validation_accuracy = (!val_idx.is_empty()).then(|| accuracy(&layout, &student, train, Some(&val_idx)));
        let test_accuracy = test.map(|t| accuracy(&layout, &student, t, None));
        history.push(EpochMetrics {
            epoch,
            step,
            loss: loss_sum / train_idx.len().max(1) as f64,
            train_accuracy: correct as f64 / train_idx.len().max(1) as f64,
            validation_accuracy,
            test_accuracy,
        });
        // Without a held-out split, selection falls back to the accuracy on
        // the training samples after the epoch.
        let score = validation_accuracy.unwrap_or_else(|| accuracy(&layout, &student, train, Some(&train_idx)));
        if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
            best = Some((score, epoch, theta.clone()));
        }
    }

    let (best_epoch, theta) = match best {
        Some((_, e, t)) => (e, t),
        None => (0, theta),
    };
    let teacher = layout.unpack(&theta);
    let parameters = TrainedParameters::new(teacher.iter().map(binarize).collect())?;
    Ok(TrainingReport {
        parameters,
        teacher,
        history,
        best_epoch,
    })
}
