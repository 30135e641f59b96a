//! Uniform mid-rise ADC on the IMAC outputs.

use serde::{Deserialize, Serialize};

use crate::circuits::NeuronParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdcParams {
    pub bits: u8,
    pub v_low: f64,
    pub v_high: f64,
}

impl Default for AdcParams {
    fn default() -> Self {
        Self::for_neuron(&NeuronParams::default(), 3)
    }
}

/// Codes travel one per buffer nibble.
pub const MAX_ADC_BITS: u8 = 4;

impl AdcParams {
    /// Reference range equal to the neuron output swing.
    pub fn for_neuron(neuron: &NeuronParams, bits: u8) -> Self {
        Self {
            bits,
            v_low: neuron.vss,
            v_high: neuron.vdd,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_ADC_BITS).contains(&self.bits) {
            return Err(Error::InvalidParameter(format!(
                "ADC resolution {} not in 1..={MAX_ADC_BITS} bits",
                self.bits
            )));
        }
        if !(self.v_low.is_finite() && self.v_high.is_finite() && self.v_high > self.v_low) {
            return Err(Error::InvalidParameter("ADC range must satisfy v_low < v_high".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> u16 {
        1 << self.bits
    }

    /// Code of the bin containing `v`; out-of-range inputs clip to the end
    /// codes.
    pub fn quantize(&self, v: f64) -> u8 {
        let top = f64::from(self.levels() - 1);
        let x = (v - self.v_low) / (self.v_high - self.v_low) * f64::from(self.levels());
        if x.is_nan() {
            return 0;
        }
        x.floor().clamp(0.0, top) as u8
    }

    /// Centre voltage of bin `code`.
    pub fn dequantize(&self, code: u8) -> f64 {
        let step = (self.v_high - self.v_low) / f64::from(self.levels());
        self.v_low + (f64::from(code) + 0.5) * step
    }
}

/// Output conversion: quantize through an ADC or pass analog values on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdcMode {
    Quantize(AdcParams),
    Bypass,
}

impl AdcMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            AdcMode::Quantize(p) => p.validate(),
            AdcMode::Bypass => Ok(()),
        }
    }
}
