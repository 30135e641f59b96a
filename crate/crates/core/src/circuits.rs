//! Analog primitives of an IMAC row: the two-cell differential synapse, the
//! shared row amplifier and the two-MTJ sigmoidal neuron.
//!
//! Two evaluation modes exist. `Ideal` works on normalized numbers and
//! computes σ(−x) directly. `Circuit` works on voltages and currents
//! derived from device conductances, with amplifier and neuron inputs
//! clipped to the supply rails.

use serde::{Deserialize, Serialize};

use crate::device::{BiasPoint, DeviceParams, DeviceState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    #[default]
    Ideal,
    Circuit,
}

impl std::str::FromStr for Fidelity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Fidelity::Ideal),
            "circuit" => Ok(Fidelity::Circuit),
            other => Err(Error::InvalidInput(format!("unknown fidelity `{other}`"))),
        }
    }
}

/// Two SOT-MRAM cells whose conductance difference encodes a ±1 weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SynapsePair {
    /// Cell driving I⁺.
    pub plus: DeviceState,
    /// Cell driving I⁻.
    pub minus: DeviceState,
}

impl SynapsePair {
    pub fn from_weight(weight: i8) -> Result<Self> {
        match weight {
            1 => Ok(Self {
                plus: DeviceState::P,
                minus: DeviceState::AP,
            }),
            -1 => Ok(Self {
                plus: DeviceState::AP,
                minus: DeviceState::P,
            }),
            other => Err(Error::NonBinary {
                value: other as f64,
                location: "synapse weight".into(),
            }),
        }
    }

    /// The stored weight, or `None` for a (P, P) / (AP, AP) pair.
    pub fn weight(self) -> Option<i8> {
        match (self.plus, self.minus) {
            (DeviceState::P, DeviceState::AP) => Some(1),
            (DeviceState::AP, DeviceState::P) => Some(-1),
            _ => None,
        }
    }
}

/// Supply rails and transfer steepness of the sigmoidal neuron.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronParams {
    pub vdd: f64,
    pub vss: f64,
    /// Steepness of the VTC transition in 1/V. A fit parameter.
    pub slope_k: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self {
            vdd: 0.8,
            vss: 0.0,
            slope_k: 10.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.vdd.is_finite() && self.vss.is_finite() && self.vdd > self.vss) {
            return Err(Error::InvalidParameter(format!(
                "neuron supply needs vdd > vss, got vdd={} vss={}",
                self.vdd, self.vss
            )));
        }
        if !(self.slope_k.is_finite() && self.slope_k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "neuron slope must be positive, got {}",
                self.slope_k
            )));
        }
        Ok(())
    }

    /// b = (VDD − VSS) / 2, the voltage the VTC is centred on.
    pub fn bias_midpoint(&self) -> f64 {
        0.5 * (self.vdd - self.vss)
    }

    pub fn swing(&self) -> f64 {
        self.vdd - self.vss
    }

    /// Maps a neuron output voltage back to (0, 1).
    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.vss) / self.swing()
    }
}

/// Row amplifier: converts the summed differential current to a voltage
/// referenced to the neuron bias point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplifierParams {
    /// V/A.
    pub transimpedance_gain: f64,
    /// Output voltage for zero differential current.
    pub reference: f64,
    pub clip_low: f64,
    pub clip_high: f64,
}

impl AmplifierParams {
    /// Amplifier referenced to the neuron's bias point and clipped to its rails.
    pub fn for_neuron(neuron: &NeuronParams, transimpedance_gain: f64) -> Result<Self> {
        neuron.validate()?;
        if !(transimpedance_gain.is_finite() && transimpedance_gain > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "amplifier gain must be positive, got {transimpedance_gain}"
            )));
        }
        Ok(Self {
            transimpedance_gain,
            reference: neuron.bias_midpoint(),
            clip_low: neuron.vss,
            clip_high: neuron.vdd,
        })
    }
}

/// How numeric layer inputs are turned into bit-line voltages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputEncoding {
    /// Real pixels in [0, 1] driven on [0, VDD].
    #[default]
    Pixel,
    /// Trits {−1, 0, +1} driven at ∓(VDD−VSS)/2 around the reference.
    Trit,
    /// Upstream neuron outputs in (0, 1), i.e. (VSS, VDD) referenced to VSS.
    Activation,
}

impl InputEncoding {
    /// Volts per unit of numeric input.
    pub fn unit_voltage(self, neuron: &NeuronParams) -> f64 {
        match self {
            InputEncoding::Pixel => neuron.vdd,
            InputEncoding::Trit => 0.5 * neuron.swing(),
            InputEncoding::Activation => neuron.swing(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputEncoding::Pixel => "PIXEL",
            InputEncoding::Trit => "TRIT",
            InputEncoding::Activation => "ACTIVATION",
        }
    }
}

impl std::str::FromStr for InputEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "PIXEL" => Ok(InputEncoding::Pixel),
            "TRIT" => Ok(InputEncoding::Trit),
            "ACTIVATION" => Ok(InputEncoding::Activation),
            other => Err(Error::InvalidInput(format!("unknown input encoding `{other}`"))),
        }
    }
}

/// Everything an analog subarray needs besides its weights.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitConfig {
    pub device: DeviceParams,
    pub neuron: NeuronParams,
    /// Junction bias at which cell conductances are evaluated.
    pub read_bias: BiasPoint,
    pub fidelity: Fidelity,
}

impl CircuitConfig {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.neuron.validate()?;
        if !self.read_bias.v_b.is_finite() {
            return Err(Error::InvalidParameter("read bias is not finite".into()));
        }
        Ok(())
    }

    /// Gain that maps a row's normalized pre-activation y onto the neuron
    /// input b + y/slope_k, so the circuit reproduces σ(−y) until the
    /// amplifier clips.
    pub fn matched_gain(&self, encoding: InputEncoding) -> Result<f64> {
        self.validate()?;
        let swing = self.device.conductance_swing(self.read_bias)?;
        if swing <= 0.0 {
            return Err(Error::InvalidParameter(
                "device has no conductance contrast at the read bias".into(),
            ));
        }
        Ok(1.0 / (self.neuron.slope_k * encoding.unit_voltage(&self.neuron) * swing))
    }
}

/// Currents through the two cells of a synapse driven at `input_voltage`.
pub fn synapse_currents(
    pair: SynapsePair,
    input_voltage: f64,
    device: &DeviceParams,
    bias: BiasPoint,
) -> Result<(f64, f64)> {
    let g_plus = device.conductance(pair.plus, bias)?;
    let g_minus = device.conductance(pair.minus, bias)?;
    Ok((input_voltage * g_plus, input_voltage * g_minus))
}

/// Amplifier output for one row: reference + gain·Σ(I⁺ − I⁻). Clipped to
/// the rails in circuit mode, unclipped in ideal mode.
pub fn amplifier_output(currents: &[(f64, f64)], amp: &AmplifierParams, fidelity: Fidelity) -> Result<f64> {
    if currents.is_empty() {
        return Err(Error::InvalidInput("amplifier needs at least one synapse current".into()));
    }
    let differential: f64 = currents.iter().map(|(p, m)| p - m).sum();
    Ok(amplify(differential, amp, fidelity))
}

pub(crate) fn amplify(differential: f64, amp: &AmplifierParams, fidelity: Fidelity) -> f64 {
    let v = amp.reference + amp.transimpedance_gain * differential;
    match fidelity {
        Fidelity::Ideal => v,
        Fidelity::Circuit => v.clamp(amp.clip_low, amp.clip_high),
    }
}

/// Neuron VTC: VSS + (VDD − VSS)·σ(−k·(v − b)), input clipped to the rails.
pub fn neuron_activation(v_in: f64, neuron: &NeuronParams) -> f64 {
    let v = v_in.clamp(neuron.vss, neuron.vdd);
    neuron.vss + neuron.swing() * ideal_neuron(neuron.slope_k * (v - neuron.bias_midpoint()))
}

/// σ(−x) = 1 / (1 + eˣ).
#[inline]
pub fn ideal_neuron(x: f64) -> f64 {
    1.0 / (1.0 + x.exp())
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn synapse_sign_rule() {
        let plus = SynapsePair::from_weight(1).unwrap();
        assert_eq!((plus.plus, plus.minus), (DeviceState::P, DeviceState::AP));
        let minus = SynapsePair::from_weight(-1).unwrap();
        assert_eq!((minus.plus, minus.minus), (DeviceState::AP, DeviceState::P));
        assert!(SynapsePair::from_weight(0).is_err());
        assert_eq!(
            SynapsePair {
                plus: DeviceState::P,
                minus: DeviceState::P
            }
            .weight(),
            None
        );
    }

    #[test]
    fn synapse_current_values() {
        let d = DeviceParams::default();
        let zero = synapse_currents(SynapsePair::from_weight(1).unwrap(), 0.0, &d, BiasPoint::ZERO).unwrap();
        assert_eq!(zero, (0.0, 0.0));
        let (ip, im) = synapse_currents(SynapsePair::from_weight(1).unwrap(), 0.8, &d, BiasPoint::ZERO).unwrap();
        assert_relative_eq!(ip * 1e6, 94.2477796076938, max_relative = 1e-9);
        assert_relative_eq!(im * 1e6, 31.415926535897935, max_relative = 1e-9);
        let (ip, im) = synapse_currents(SynapsePair::from_weight(-1).unwrap(), 0.3, &d, BiasPoint::ZERO).unwrap();
        assert!(ip - im < 0.0);
    }

    #[test]
    fn amplifier_behaviour() {
        let n = NeuronParams::default();
        let amp = AmplifierParams::for_neuron(&n, 1000.0).unwrap();
        assert!(amplifier_output(&[], &amp, Fidelity::Ideal).is_err());
        let mid = amplifier_output(&[(0.0, 0.0), (0.0, 0.0)], &amp, Fidelity::Circuit).unwrap();
        assert_eq!(mid, n.bias_midpoint());

        let single = [(94.2477796076938e-6, 31.415926535897935e-6)];
        let out = amplifier_output(&single, &amp, Fidelity::Ideal).unwrap() - amp.reference;
        assert_relative_eq!(out, 1000.0 * 62.83185307179586e-6, max_relative = 1e-9);
        let neg = [(31.415926535897935e-6, 94.2477796076938e-6)];
        let out_neg = amplifier_output(&neg, &amp, Fidelity::Ideal).unwrap() - amp.reference;
        assert_relative_eq!(out_neg, -out, max_relative = 1e-12);

        let big = AmplifierParams::for_neuron(&n, 1e6).unwrap();
        assert_eq!(amplifier_output(&single, &big, Fidelity::Circuit).unwrap(), n.vdd);
        assert_eq!(amplifier_output(&neg, &big, Fidelity::Circuit).unwrap(), n.vss);
    }

    #[test]
    fn neuron_points() {
        let n = NeuronParams::default();
        assert_relative_eq!(neuron_activation(0.4, &n), 0.4, max_relative = 1e-15);
        let v = neuron_activation(n.bias_midpoint() + 1.0 / n.slope_k, &n);
        assert_relative_eq!(v, 0.2689414213699951 * 0.8, max_relative = 1e-12);
        assert!(neuron_activation(n.vdd, &n) < 0.02 * n.vdd);
        assert!(neuron_activation(n.vss, &n) > 0.98 * n.vdd);
        assert!(neuron_activation(5.0, &n) == neuron_activation(n.vdd, &n));
    }

    #[test]
    fn ideal_neuron_points() {
        assert_eq!(ideal_neuron(0.0), 0.5);
        assert!(ideal_neuron(800.0) == 0.0);
        assert_relative_eq!(ideal_neuron(1.0), 0.2689414213699951, max_relative = 1e-15);
    }

    #[test]
    fn matched_gain_reproduces_ideal_neuron() {
        let cfg = CircuitConfig::default();
        let gain = cfg.matched_gain(InputEncoding::Activation).unwrap();
        let amp = AmplifierParams::for_neuron(&cfg.neuron, gain).unwrap();
        // One +1 synapse driven with activation 0.3 and a +1 bias column at full scale.
        let unit = InputEncoding::Activation.unit_voltage(&cfg.neuron);
        let pair = SynapsePair::from_weight(1).unwrap();
        let c1 = synapse_currents(pair, 0.3 * unit, &cfg.device, cfg.read_bias).unwrap();
        let c2 = synapse_currents(pair, unit, &cfg.device, cfg.read_bias).unwrap();
        let v = amplifier_output(&[c1, c2], &amp, Fidelity::Circuit).unwrap();
        let out = cfg.neuron.normalize(neuron_activation(v, &cfg.neuron));
        assert_relative_eq!(out, ideal_neuron(1.3), max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn sign_rule_holds_for_any_device(ra in 0.5f64..50.0, tmr0 in 1.0f64..400.0, v in -0.8f64..0.8, x in 0.01f64..1.0) {
            let d = DeviceParams { ra_product: ra, tmr0, ..Default::default() };
            for w in [-1i8, 1] {
                let (ip, im) = synapse_currents(SynapsePair::from_weight(w).unwrap(), x, &d, BiasPoint { v_b: v }).unwrap();
                prop_assert_eq!((ip - im).signum() as i8, w);
            }
        }

        #[test]
        fn neuron_strictly_decreasing_inside_rails(a in 0.0f64..0.8, d in 1e-4f64..0.2) {
            let n = NeuronParams::default();
            let b = (a + d).min(n.vdd);
            prop_assume!(b > a);
            let (fa, fb) = (neuron_activation(a, &n), neuron_activation(b, &n));
            prop_assert!(fb < fa);
            prop_assert!(fa > n.vss && fa < n.vdd);
        }

        #[test]
        fn circuit_and_ideal_neuron_agree(u in -4.0f64..4.0) {
            let n = NeuronParams::default();
            let lhs = neuron_activation(n.bias_midpoint() + u / n.slope_k, &n);
            let rhs = n.vss + n.swing() * ideal_neuron(u);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn amplifier_linear_before_clip(i1 in -1e-4f64..1e-4, i2 in -1e-4f64..1e-4, s in -3.0f64..3.0) {
            let amp = AmplifierParams::for_neuron(&NeuronParams::default(), 1234.0).unwrap();
            let f = |a: f64, b: f64| amplifier_output(&[(a, 0.0), (b, 0.0)], &amp, Fidelity::Ideal).unwrap() - amp.reference;
            prop_assert!((f(s * i1, i2) - (s * f(i1, 0.0) + f(0.0, i2))).abs() < 1e-9);
        }
    }
}
