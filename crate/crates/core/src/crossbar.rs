//! One n×m IMAC subarray: m rows of n synapse pairs (plus an optional
//! bias column), a differential amplifier per row and a sigmoidal neuron
//! per row.
//!
//! Row accumulation is exposed separately from activation so a layer that
//! is wider than one subarray can carry a row's partial sum from one slice
//! into the next before the shared amplifier fires.

use crate::binary::BinaryMatrix;
use crate::circuits::{
    amplify, ideal_neuron, neuron_activation, AmplifierParams, CircuitConfig, Fidelity, InputEncoding,
    SynapsePair,
};
use crate::device::DeviceState;
use crate::error::{Error, Result};

/// Largest row or column count of one physical subarray.
pub const MAX_SUBARRAY_DIM: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SubarrayConfig {
    /// Data columns (inputs).
    pub n_inputs: usize,
    /// Rows (neurons).
    pub m_rows: usize,
    /// Whether an extra always-driven column realizes the biases.
    pub bias_column: bool,
    pub circuit: CircuitConfig,
    /// How this subarray's inputs are driven in circuit mode.
    pub encoding: InputEncoding,
    /// Row amplifier gain; `None` selects [`CircuitConfig::matched_gain`].
    pub transimpedance_gain: Option<f64>,
}

impl SubarrayConfig {
    pub fn new(n_inputs: usize, m_rows: usize, circuit: CircuitConfig) -> Self {
        Self {
            n_inputs,
            m_rows,
            bias_column: true,
            circuit,
            encoding: InputEncoding::Pixel,
            transimpedance_gain: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n_inputs", self.n_inputs), ("m_rows", self.m_rows)] {
            if v == 0 || v > MAX_SUBARRAY_DIM {
                return Err(Error::InvalidParameter(format!(
                    "{name} = {v} is outside 1..={MAX_SUBARRAY_DIM}"
                )));
            }
        }
        self.circuit.validate()
    }
}

#[derive(Debug, Clone)]
pub struct Subarray {
    config: SubarrayConfig,
    amp: AmplifierParams,
    g_p: f64,
    g_ap: f64,
    unit_voltage: f64,
    /// Row-major, `columns()` pairs per row; the bias pair is last.
    synapses: Vec<SynapsePair>,
    programmed: bool,
}

impl Subarray {
    pub fn new(config: SubarrayConfig) -> Result<Self> {
        config.validate()?;
        let circuit = &config.circuit;
        let gain = match config.transimpedance_gain {
            Some(g) => g,
            None => circuit.matched_gain(config.encoding)?,
        };
        let amp = AmplifierParams::for_neuron(&circuit.neuron, gain)?;
        let g_p = circuit.device.conductance(DeviceState::P, circuit.read_bias)?;
        let g_ap = circuit.device.conductance(DeviceState::AP, circuit.read_bias)?;
        let unit_voltage = config.encoding.unit_voltage(&circuit.neuron);
        let cols = config.n_inputs + usize::from(config.bias_column);
        // Unprogrammed cells sit in P/P, which encodes no weight.
        let blank = SynapsePair {
            plus: DeviceState::P,
            minus: DeviceState::P,
        };
        Ok(Self {
            amp,
            g_p,
            g_ap,
            unit_voltage,
            synapses: vec![blank; config.m_rows * cols],
            programmed: false,
            config,
        })
    }

    pub fn config(&self) -> &SubarrayConfig {
        &self.config
    }

    pub fn amplifier(&self) -> &AmplifierParams {
        &self.amp
    }

    pub fn is_programmed(&self) -> bool {
        self.programmed
    }

    /// Physical columns including the bias column.
    pub fn columns(&self) -> usize {
        self.config.n_inputs + usize::from(self.config.bias_column)
    }

    pub fn pair(&self, row: usize, col: usize) -> SynapsePair {
        self.synapses[row * self.columns() + col]
    }

    pub fn weight(&self, row: usize, col: usize) -> i8 {
        self.pair(row, col).weight().unwrap_or(0)
    }

    pub fn bias(&self, row: usize) -> Option<i8> {
        self.config
            .bias_column
            .then(|| self.weight(row, self.config.n_inputs))
    }

    /// Writes the weights (and biases, when the subarray has a bias
    /// column) one row per write cycle. Returns the number of cycles.
    pub fn program(&mut self, weights: &BinaryMatrix, biases: Option<&[i8]>) -> Result<usize> {
        let (m, n) = (self.config.m_rows, self.config.n_inputs);
        if weights.rows() != m || weights.cols() != n {
            return Err(Error::DimensionMismatch(format!(
                "subarray is {m}×{n}, weights are {}×{}",
                weights.rows(),
                weights.cols()
            )));
        }
        match (self.config.bias_column, biases) {
            (true, Some(b)) if b.len() != m => {
                return Err(Error::DimensionMismatch(format!("{} biases for {m} rows", b.len())));
            }
            (true, None) => {
                return Err(Error::InvalidInput("subarray has a bias column but no biases were given".into()));
            }
            (false, Some(_)) => {
                return Err(Error::InvalidInput("subarray has no bias column".into()));
            }
            _ => {}
        }
        if let Some(b) = biases {
            if let Some(pos) = b.iter().position(|&v| v != 1 && v != -1) {
                return Err(Error::NonBinary {
                    value: b[pos] as f64,
                    location: format!("bias[{pos}]"),
                });
            }
        }
        let cols = self.columns();
        let mut cycles = 0;
        for r in 0..m {
            let row = &mut self.synapses[r * cols..(r + 1) * cols];
            for (c, &w) in weights.row(r).iter().enumerate() {
                row[c] = SynapsePair::from_weight(w)?;
            }
            if let Some(b) = biases {
                row[n] = SynapsePair::from_weight(b[r])?;
            }
            cycles += 1;
        }
        self.programmed = true;
        Ok(cycles)
    }

    fn check_inputs(&self, inputs: &[f64], fidelity: Fidelity) -> Result<()> {
        if !self.programmed {
            return Err(Error::Unprogrammed);
        }
        if inputs.len() != self.config.n_inputs {
            return Err(Error::DimensionMismatch(format!(
                "subarray has {} inputs, got {}",
                self.config.n_inputs,
                inputs.len()
            )));
        }
        let (lo, hi) = match (fidelity, self.config.encoding) {
            (Fidelity::Ideal, _) => (f64::NEG_INFINITY, f64::INFINITY),
            (Fidelity::Circuit, InputEncoding::Trit) => (-1.0, 1.0),
            (Fidelity::Circuit, _) => (0.0, 1.0),
        };
        if let Some(pos) = inputs.iter().position(|&x| !x.is_finite() || x < lo || x > hi) {
            return Err(Error::InvalidInput(format!(
                "input {pos} = {} is outside the {:?} encoding range",
                inputs[pos], self.config.encoding
            )));
        }
        Ok(())
    }

    /// Adds this subarray's contribution to each row accumulator.
    ///
    /// Ideal mode accumulates Σ W·x; circuit mode accumulates Σ (I⁺ − I⁻)
    /// in amperes. Columns are visited in order.
    pub fn accumulate(&self, inputs: &[f64], fidelity: Fidelity, acc: &mut [f64]) -> Result<()> {
        self.check_inputs(inputs, fidelity)?;
        if acc.len() != self.config.m_rows {
            return Err(Error::DimensionMismatch(format!(
                "{} accumulators for {} rows",
                acc.len(),
                self.config.m_rows
            )));
        }
        let cols = self.columns();
        for (r, a) in acc.iter_mut().enumerate() {
            let row = &self.synapses[r * cols..r * cols + self.config.n_inputs];
            match fidelity {
                Fidelity::Ideal => {
                    for (pair, &x) in row.iter().zip(inputs) {
                        *a += pair.weight().unwrap_or(0) as f64 * x;
                    }
                }
                Fidelity::Circuit => {
                    for (pair, &x) in row.iter().zip(inputs) {
                        let v = x * self.unit_voltage;
                        *a += v * self.conductance(pair.plus) - v * self.conductance(pair.minus);
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds the bias column and applies amplifier + neuron, returning
    /// normalized outputs in (0, 1).
    pub fn activate(&self, acc: &[f64], fidelity: Fidelity) -> Vec<f64> {
        let n = self.config.n_inputs;
        let cols = self.columns();
        acc.iter()
            .enumerate()
            .map(|(r, &a)| {
                let bias_pair = self.config.bias_column.then(|| self.synapses[r * cols + n]);
                match fidelity {
                    Fidelity::Ideal => {
                        let y = a + bias_pair.map_or(0.0, |p| p.weight().unwrap_or(0) as f64);
                        ideal_neuron(y)
                    }
                    Fidelity::Circuit => {
                        let i = a + bias_pair.map_or(0.0, |p| {
                            let v = self.unit_voltage;
                            v * self.conductance(p.plus) - v * self.conductance(p.minus)
                        });
                        let neuron = &self.config.circuit.neuron;
                        let v_amp = amplify(i, &self.amp, Fidelity::Circuit);
                        neuron.normalize(neuron_activation(v_amp, neuron))
                    }
                }
            })
            .collect()
    }

    fn conductance(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::P => self.g_p,
            DeviceState::AP => self.g_ap,
        }
    }

    /// Single-step inference in the configured fidelity mode.
    pub fn forward(&self, inputs: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(inputs, self.config.circuit.fidelity)
    }

    pub fn forward_with(&self, inputs: &[f64], fidelity: Fidelity) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.config.m_rows];
        self.accumulate(inputs, fidelity, &mut acc)?;
        Ok(self.activate(&acc, fidelity))
    }

    /// max over rows of |circuit output − ideal output|, both normalized.
    pub fn forward_fidelity_gap(&self, inputs: &[f64]) -> Result<f64> {
        let ideal = self.forward_with(inputs, Fidelity::Ideal)?;
        let circuit = self.forward_with(inputs, Fidelity::Circuit)?;
        Ok(ideal
            .iter()
            .zip(&circuit)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::oracle::brute_force_layer;

    fn subarray(n: usize, m: usize) -> Subarray {
        Subarray::new(SubarrayConfig::new(n, m, CircuitConfig::default())).unwrap()
    }

    #[test]
    fn program_counts_one_cycle_per_row() {
        let mut s = subarray(4, 10);
        let cycles = s.program(&BinaryMatrix::filled(10, 4, 1).unwrap(), Some(&[1; 10])).unwrap();
        assert_eq!(cycles, 10);
    }

    #[test]
    fn negative_weight_is_ap_p() {
        let mut s = subarray(2, 1);
        s.program(&BinaryMatrix::new(1, 2, vec![1, -1]).unwrap(), Some(&[1])).unwrap();
        let p = s.pair(0, 1);
        assert_eq!((p.plus, p.minus), (DeviceState::AP, DeviceState::P));
        let before = s.synapses.clone();
        s.program(&BinaryMatrix::new(1, 2, vec![1, -1]).unwrap(), Some(&[1])).unwrap();
        assert_eq!(before, s.synapses);
    }

    #[test]
    fn program_errors() {
        let mut s = subarray(2, 2);
        assert!(s.program(&BinaryMatrix::filled(2, 3, 1).unwrap(), Some(&[1, 1])).is_err());
        assert!(s.program(&BinaryMatrix::filled(2, 2, 1).unwrap(), Some(&[1, 0])).is_err());
        assert!(s.program(&BinaryMatrix::filled(2, 2, 1).unwrap(), None).is_err());
        assert!(matches!(s.forward(&[0.0, 0.0]), Err(Error::Unprogrammed)));
        assert!(Subarray::new(SubarrayConfig::new(513, 1, CircuitConfig::default())).is_err());
        assert!(Subarray::new(SubarrayConfig::new(1, 0, CircuitConfig::default())).is_err());
    }

    #[test]
    fn zero_input_with_positive_bias() {
        let mut s = subarray(3, 4);
        s.program(&BinaryMatrix::filled(4, 3, -1).unwrap(), Some(&[1; 4])).unwrap();
        for o in s.forward(&[0.0; 3]).unwrap() {
            assert!((o - 0.2689414213699951).abs() < 1e-15);
        }
        assert!(s.forward(&[0.0; 2]).is_err());
    }

    #[test]
    fn identity_scale() {
        let mut s = subarray(1, 1);
        s.program(&BinaryMatrix::new(1, 1, vec![1]).unwrap(), Some(&[-1])).unwrap();
        assert_eq!(s.forward(&[1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn exhaustive_two_by_two_matches_oracle() {
        let levels = [-1.0, 0.0, 1.0];
        for wbits in 0..16u32 {
            let w: Vec<i8> = (0..4).map(|k| if wbits >> k & 1 == 1 { 1 } else { -1 }).collect();
            for bbits in 0..4u32 {
                let b: Vec<i8> = (0..2).map(|k| if bbits >> k & 1 == 1 { 1 } else { -1 }).collect();
                let mut s = subarray(2, 2);
                let wm = BinaryMatrix::new(2, 2, w.clone()).unwrap();
                s.program(&wm, Some(&b)).unwrap();
                for x0 in levels {
                    for x1 in levels {
                        let x = [x0, x1];
                        let got = s.forward_with(&x, Fidelity::Ideal).unwrap();
                        let want = brute_force_layer(&wm, &b, &x);
                        for (g, e) in got.iter().zip(&want) {
                            assert!((g - e).abs() <= 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fidelity_gap_is_small_for_narrow_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let n = rng.gen_range(1..=16);
            let m = rng.gen_range(1..=8);
            let mut s = subarray(n, m);
            let w: Vec<i8> = (0..n * m).map(|_| if rng.gen() { 1 } else { -1 }).collect();
            let b: Vec<i8> = (0..m).map(|_| if rng.gen() { 1 } else { -1 }).collect();
            s.program(&BinaryMatrix::new(m, n, w).unwrap(), Some(&b)).unwrap();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
            worst = worst.max(s.forward_fidelity_gap(&x).unwrap());
        }
        // Clipping at the rails bounds the gap by σ(−k·(VDD−VSS)/2) = σ(−4).
        assert!(worst <= 0.05, "worst gap {worst}");
        assert!(worst <= ideal_neuron(4.0) + 1e-12, "worst gap {worst}");
    }

    #[test]
    fn fidelity_gap_zero_at_zero_input() {
        let mut s = subarray(5, 3);
        s.program(&BinaryMatrix::filled(3, 5, 1).unwrap(), Some(&[1, -1, 1])).unwrap();
        assert!(s.forward_fidelity_gap(&[0.0; 5]).unwrap() < 1e-12);
    }

    #[test]
    fn circuit_mode_rejects_out_of_range_inputs() {
        let mut s = subarray(2, 1);
        s.program(&BinaryMatrix::filled(1, 2, 1).unwrap(), Some(&[1])).unwrap();
        assert!(s.forward_with(&[1.5, 0.0], Fidelity::Circuit).is_err());
        assert!(s.forward_with(&[1.5, 0.0], Fidelity::Ideal).is_ok());
    }

    fn random_layer(n: usize, m: usize, seed: u64) -> (BinaryMatrix, Vec<i8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<i8> = (0..n * m).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        let b: Vec<i8> = (0..m).map(|_| if rng.gen() { 1 } else { -1 }).collect();
        (BinaryMatrix::new(m, n, w).unwrap(), b)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn circuit_forward_monotone_in_positive_inputs(n in 1usize..12, m in 1usize..6, seed in any::<u64>(), bump in 0.01f64..0.5) {
            let (w, b) = random_layer(n, m, seed);
            let mut s = subarray(n, m);
            s.program(&w, Some(&b)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.5)).collect();
            let base = s.forward_with(&x, Fidelity::Circuit).unwrap();
            for c in 0..n {
                let mut y = x.clone();
                y[c] += bump;
                let out = s.forward_with(&y, Fidelity::Circuit).unwrap();
                for r in 0..m {
                    if w.get(r, c) == 1 {
                        prop_assert!(out[r] <= base[r]);
                    }
                }
            }
        }

        #[test]
        fn column_permutation_invariance(n in 1usize..20, m in 1usize..5, seed in any::<u64>()) {
            let (w, b) = random_layer(n, m, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let pw: Vec<i8> = (0..m).flat_map(|r| perm.iter().map(move |&c| (r, c))).map(|(r, c)| w.get(r, c)).collect();
            let px: Vec<f64> = perm.iter().map(|&c| x[c]).collect();
            let mut s1 = subarray(n, m);
            s1.program(&w, Some(&b)).unwrap();
            let mut s2 = subarray(n, m);
            s2.program(&BinaryMatrix::new(m, n, pw).unwrap(), Some(&b)).unwrap();
            for fidelity in [Fidelity::Ideal, Fidelity::Circuit] {
                let a = s1.forward_with(&x, fidelity).unwrap();
                let c = s2.forward_with(&px, fidelity).unwrap();
                for (u, v) in a.iter().zip(&c) {
                    prop_assert!((u - v).abs() < 1e-12);
                }
            }
            prop_assert!((s1.forward_fidelity_gap(&x).unwrap() - s2.forward_fidelity_gap(&px).unwrap()).abs() < 1e-12);
        }
    }
}
