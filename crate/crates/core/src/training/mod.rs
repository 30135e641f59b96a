//! Hardware-aware training.
//!
//! Binarized fully-connected networks are trained teacher-student style:
//! real-valued teacher parameters live in [−1, 1], the forward pass uses
//! their signs, and gradients flow back to the teacher through a clipped
//! straight-through estimator. Convolutional networks are trained in two
//! steps: a full-precision network first, then its fully-connected head is
//! retrained as a binarized network on sign-quantized features.

mod checkpoint;
mod cnn;
mod mlp;
mod optim;
mod two_step;

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binary::{BinarizedLayer, BinaryMatrix};
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use cnn::{gradient_check, lenet5, reduced_vgg, toy_conv_spec, vgg16, Cnn, CnnSpec, FeatureLayer, GradientCheck, Shape};
pub use mlp::{student_forward, train_mlp, TrainingReport};
pub use optim::{Adam, Schedule};
pub use two_step::{cnn_accuracy, derive_features, train_cnn, train_cnn_two_step, Step1Report, TwoStepOptions, TwoStepReport};

/// Real-valued shadow of one binarized layer, row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl TeacherLayer {
    pub fn new(inputs: usize, outputs: usize, w: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if w.len() != inputs * outputs || b.len() != outputs {
            return Err(Error::DimensionMismatch(format!(
                "teacher layer {outputs}×{inputs} with {} weights and {} biases",
                w.len(),
                b.len()
            )));
        }
        if let Some(v) = w.iter().chain(&b).find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!("teacher value {v} outside [-1, 1]")));
        }
        Ok(Self { inputs, outputs, w, b })
    }

    /// Uniform initialization in ±`scale`, or the Glorot bound when `None`.
    pub fn random(rng: &mut impl Rng, inputs: usize, outputs: usize, scale: Option<f64>) -> Self {
        let bound = scale
            .unwrap_or_else(|| (6.0 / (inputs + outputs) as f64).sqrt())
            .min(1.0);
        let mut draw = || rng.gen_range(-bound..=bound);
        let w = (0..inputs * outputs).map(|_| draw()).collect();
        let b = (0..outputs).map(|_| draw()).collect();
        Self { inputs, outputs, w, b }
    }

    pub fn clip(&mut self) {
        for v in self.w.iter_mut().chain(self.b.iter_mut()) {
            *v = v.clamp(-1.0, 1.0);
        }
    }

    pub fn is_clipped(&self) -> bool {
        self.w.iter().chain(&self.b).all(|v| (-1.0..=1.0).contains(v))
    }
}

/// Deterministic sign binarization with zero mapping to +1.
pub fn binarize_value(w: f64) -> i8 {
    if w >= 0.0 {
        1
    } else {
        -1
    }
}

pub fn binarize(teacher: &TeacherLayer) -> BinarizedLayer {
    let weights = BinaryMatrix::new(
        teacher.outputs,
        teacher.inputs,
        teacher.w.iter().map(|&w| binarize_value(w)).collect(),
    )
    .expect("binarized values are ±1");
    BinarizedLayer::new(weights, teacher.b.iter().map(|&b| binarize_value(b)).collect())
        .expect("shapes come from a valid teacher")
}

/// Elementwise sign into {−1, 0, +1}.
pub fn sign_unit<T: num_traits::Float>(x: &[T]) -> Vec<i8> {
    x.iter()
        .map(|&v| {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Optimizer and loop settings shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    /// Multiplier on network outputs before the softmax.
    pub temperature: f64,
    /// Share of the training set held out for best-epoch selection.
    pub validation_fraction: f64,
    /// Half-width of the uniform initialization; `None` uses Glorot.
    pub init_scale: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            schedule: Schedule::Cosine,
            temperature: 1.0,
            validation_fraction: 1.0 / 12.0,
            init_scale: None,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if let Some(s) = self.init_scale {
            if !(s > 0.0 && s <= 1.0) {
                return bad("init_scale must be in (0, 1]");
            }
        }
        Ok(())
    }
}

/// One row of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

pub fn write_metrics_csv(out: impl Write, history: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Class decision for a vector of neuron outputs. A single output is read
/// as a binary classifier thresholded at one half.
pub fn classify(outputs: &[f64]) -> usize {
    if outputs.len() == 1 {
        usize::from(outputs[0] > 0.5)
    } else {
        crate::network::argmax(outputs)
    }
}

/// Splits `0..n` into shuffled training and held-out validation indices.
pub(crate) fn split_indices(rng: &mut impl Rng, n: usize, validation_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = (n as f64 * validation_fraction).floor() as usize;
    let val = idx.split_off(n - n_val);
    (idx, val)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn binarize_rule() {
        assert_eq!(binarize_value(0.0), 1);
        assert_eq!(binarize_value(-0.3), -1);
        assert_eq!(binarize_value(0.7), 1);
        let t = TeacherLayer::new(2, 1, vec![0.0, -0.3], vec![-1.0]).unwrap();
        let b = binarize(&t);
        assert_eq!(b.weights.as_slice(), &[1, -1]);
        assert_eq!(b.biases, vec![-1]);
    }

    #[test]
    fn sign_unit_values() {
        assert_eq!(sign_unit(&[-2.5, 0.0, 7.1]), vec![-1, 0, 1]);
        let relu: Vec<f64> = [-3.0f64, 0.0, 2.0].iter().map(|v| v.max(0.0)).collect();
        assert!(sign_unit(&relu).iter().all(|&t| t >= 0));
    }

    #[test]
    fn teacher_validation() {
        assert!(TeacherLayer::new(2, 1, vec![0.0, 1.5], vec![0.0]).is_err());
        assert!(TeacherLayer::new(2, 1, vec![0.0], vec![0.0]).is_err());
        assert!(HyperParams::default().validate().is_ok());
        assert!(HyperParams { batch_size: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn split_sizes() {
        let mut rng = crate::rng::Seeds::new(1).stream(crate::rng::Stream::Data);
        let (t, v) = split_indices(&mut rng, 120, 1.0 / 12.0);
        assert_eq!((t.len(), v.len()), (110, 10));
        let mut all: Vec<usize> = t.into_iter().chain(v).collect();
        all.sort_unstable();
        assert_eq!(all, (0..120).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn binarize_is_idempotent(vals in proptest::collection::vec(-1.0f64..=1.0, 6)) {
            let t = TeacherLayer::new(2, 2, vals[..4].to_vec(), vals[4..].to_vec()).unwrap();
            let once = binarize(&t);
            let as_real = TeacherLayer::new(
                2, 2,
                once.weights.as_slice().iter().map(|&v| f64::from(v)).collect(),
                once.biases.iter().map(|&v| f64::from(v)).collect(),
            ).unwrap();
            prop_assert_eq!(binarize(&as_real), once);
        }

        #[test]
        fn sign_unit_is_idempotent(x in proptest::collection::vec(-10.0f64..10.0, 0..20)) {
            let once = sign_unit(&x);
            let again = sign_unit(&once.iter().map(|&t| f64::from(t)).collect::<Vec<_>>());
            prop_assert_eq!(once, again);
        }

        #[test]
        fn clip_bounds(vals in proptest::collection::vec(-5.0f64..5.0, 3)) {
            let mut t = TeacherLayer { inputs: 2, outputs: 1, w: vals[..2].to_vec(), b: vals[2..].to_vec() };
            t.clip();
            prop_assert!(t.is_clipped());
        }
    }
}
