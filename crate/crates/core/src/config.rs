//! Run configuration: a TOML file with one table per subsystem.
//!
//! Every table rejects unknown keys and every field has a default, so an
//! empty file is a valid configuration.
//!
//! ```toml
//! seed = 7
//!
//! [device]
//! tmr0 = 200.0
//!
//! [training.mlp]
//! epochs = 20
//!
//! [adc]
//! enabled = false
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circuits::{CircuitConfig, Fidelity, InputEncoding, NeuronParams};
use crate::device::{BiasPoint, DeviceParams};
use crate::error::{Error, Result};
use crate::network::{MapOptions, SubarrayBudget};
use crate::perf::CostModel;
use crate::pipeline::{AdcMode, AdcParams};
use crate::training::HyperParams;

/// Environment variable consulted when `data.mnist_dir` is unset.
pub const MNIST_DIR_ENV: &str = "IMAC_MNIST_DIR";
/// Environment variable consulted when `data.cifar10_dir` is unset.
pub const CIFAR10_DIR_ENV: &str = "IMAC_CIFAR10_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitSection {
    pub neuron: NeuronParams,
    pub read_bias: BiasPoint,
    pub fidelity: Fidelity,
    /// Encoding of MLP inputs; CNN heads always receive trits.
    pub input_encoding: InputEncoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub mlp: HyperParams,
    /// Full-precision CNN training.
    pub step1: HyperParams,
    /// Binarized head training on sign features.
    pub step2: HyperParams,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            mlp: HyperParams::default(),
            step1: HyperParams {
                epochs: 5,
                ..HyperParams::default()
            },
            step2: HyperParams {
                epochs: 30,
                temperature: 4.0,
                ..HyperParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySection {
    /// Layer widths of the standalone MLP, input first.
    pub mlp: Vec<usize>,
    pub subarrays: usize,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            mlp: vec![784, 16, 10],
            subarrays: SubarrayBudget::default().subarrays,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdcSection {
    pub enabled: bool,
    pub bits: u8,
    /// Reference range; defaults to the neuron supply rails.
    pub v_low: Option<f64>,
    pub v_high: Option<f64>,
}

impl Default for AdcSection {
    fn default() -> Self {
        Self {
            enabled: true,
            bits: 3,
            v_low: None,
            v_high: None,
        }
    }
}

impl AdcSection {
    pub fn mode(&self, neuron: &NeuronParams) -> AdcMode {
        if !self.enabled {
            return AdcMode::Bypass;
        }
        let mut p = AdcParams::for_neuron(neuron, self.bits);
        p.v_low = self.v_low.unwrap_or(p.v_low);
        p.v_high = self.v_high.unwrap_or(p.v_high);
        AdcMode::Quantize(p)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub mnist_dir: Option<PathBuf>,
    pub cifar10_dir: Option<PathBuf>,
    /// Where derived sign features are cached between runs.
    pub cache_dir: Option<PathBuf>,
}

impl DataSection {
    pub fn mnist_dir(&self) -> Option<PathBuf> {
        self.mnist_dir.clone().or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
    }

    pub fn cifar10_dir(&self) -> Option<PathBuf> {
        self.cifar10_dir.clone().or_else(|| std::env::var_os(CIFAR10_DIR_ENV).map(PathBuf::from))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub device: DeviceParams,
    pub circuit: CircuitSection,
    pub training: TrainingSection,
    pub cost_model: CostModel,
    pub topology: TopologySection,
    pub adc: AdcSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.circuit_config().validate()?;
        self.training.mlp.validate()?;
        self.training.step1.validate()?;
        self.training.step2.validate()?;
        self.cost_model.validate()?;
        self.adc.mode(&self.circuit.neuron).validate()?;
        if self.topology.mlp.len() < 2 || self.topology.mlp.contains(&0) {
            return Err(Error::Config(format!("invalid MLP topology {:?}", self.topology.mlp)));
        }
        if self.topology.subarrays == 0 {
            return Err(Error::Config("at least one subarray is required".into()));
        }
        Ok(())
    }

    pub fn circuit_config(&self) -> CircuitConfig {
        CircuitConfig {
            device: self.device,
            neuron: self.circuit.neuron,
            read_bias: self.circuit.read_bias,
            fidelity: self.circuit.fidelity,
        }
    }

    pub fn budget(&self) -> SubarrayBudget {
        SubarrayBudget {
            subarrays: self.topology.subarrays,
        }
    }

    /// Mapping options for the standalone MLP.
    pub fn mlp_map_options(&self) -> MapOptions {
        MapOptions {
            circuit: self.circuit_config(),
            input_encoding: self.circuit.input_encoding,
            budget: self.budget(),
            layer_gains: None,
        }
    }

    /// Mapping options for a CNN head fed with sign features.
    pub fn head_map_options(&self) -> MapOptions {
        MapOptions {
            input_encoding: InputEncoding::Trit,
            ..self.mlp_map_options()
        }
    }

    pub fn adc_mode(&self) -> AdcMode {
        self.adc.mode(&self.circuit.neuron)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.seed = 42;
        c.adc.enabled = false;
        c.data.mnist_dir = Some("/data/mnist".into());
        c.training.mlp.epochs = 3;
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_keys_everywhere() {
        for text in [
            "sed = 1",
            "[device]\ntmr = 1.0",
            "[circuit.neuron]\nvd = 1.0",
            "[training.mlp]\nepoch = 1",
            "[cost_model]\ncpu_energy = 1.0",
            "[topology]\nlayers = [1, 2]",
            "[adc]\nbit = 3",
            "[data]\nmnist = \"x\"",
            "[extra]",
        ] {
            assert!(matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn rejects_invalid_values() {
        for text in [
            "[adc]\nbits = 6",
            "[topology]\nmlp = [784]",
            "[training.step2]\nlearning_rate = -1.0",
            "[cost_model]\ncpu_frequency = 0.0",
            "[circuit.neuron]\nvdd = -1.0",
        ] {
            assert!(RunConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn adc_section_selects_mode() {
        let c = RunConfig::from_toml_str("[adc]\nbits = 2\nv_high = 0.6").unwrap();
        assert_eq!(
            c.adc_mode(),
            AdcMode::Quantize(AdcParams {
                bits: 2,
                v_low: 0.0,
                v_high: 0.6
            })
        );
        let c = RunConfig::from_toml_str("[adc]\nenabled = false").unwrap();
        assert_eq!(c.adc_mode(), AdcMode::Bypass);
    }
}
