//! Adam and the learning-rate schedule, shared by the binarized and the
//! full-precision trainers.

use num_traits::Float;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from the base rate to zero over the whole run.
    #[default]
    Cosine,
}

impl Schedule {
    pub fn rate(self, base: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine if total_steps == 0 => base,
            Schedule::Cosine => {
                base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Float> Adam<T> {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    /// One bias-corrected update of `params` along `grad` with step `lr`.
    pub fn step(&mut self, params: &mut [T], grad: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c = |x: f64| T::from(x).expect("representable constant");
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let one = T::one();
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let step = c(lr * bc2.sqrt() / bc1);
        let eps = c(self.eps * bc2.sqrt());
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            params[i] = params[i] - step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}
