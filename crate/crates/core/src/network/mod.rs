//! Multi-layer IMAC networks built from subarrays.
//!
//! [`map_network`] splits each fully-connected layer into subarray tiles
//! of at most 512×512 synapse pairs, programs them, and wires layer `l`'s
//! neuron outputs into layer `l+1`'s bit lines. Layers wider than 512
//! inputs are split by columns; the tiles of a row group share one
//! amplifier, so their partial sums are accumulated before activation.

mod netlist;
mod param_file;

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::binary::{BinarizedLayer, BinaryMatrix, TrainedParameters};
use crate::circuits::{CircuitConfig, Fidelity, InputEncoding};
use crate::crossbar::{Subarray, SubarrayConfig, MAX_SUBARRAY_DIM};
use crate::data::FeatureSet;
use crate::error::{Error, Result};
pub use netlist::{export_netlist, parse_netlist};
pub use param_file::{
    decode_parameters, encode_parameters, read_parameters, write_parameters, PARAM_MAGIC, PARAM_VERSION,
};

/// Number of physical 512×512 subarrays available to the mapper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubarrayBudget {
    pub subarrays: usize,
}

impl Default for SubarrayBudget {
    /// Four subarrays, i.e. 128 KB of cells.
    fn default() -> Self {
        Self { subarrays: 4 }
    }
}

impl SubarrayBudget {
    pub fn unlimited() -> Self {
        Self { subarrays: usize::MAX }
    }

    /// Capacity in bytes, counting one bit per 512×512 cell position.
    pub fn capacity_bytes(&self) -> usize {
        self.subarrays.saturating_mul(MAX_SUBARRAY_DIM * MAX_SUBARRAY_DIM / 8)
    }
}

/// Placement of one tile of a layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceAssignment {
    pub subarray: usize,
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImacTopology {
    /// Layer widths including the input, e.g. `[784, 16, 10]`.
    pub layer_dims: Vec<usize>,
    /// Per layer, its tiles in (row group, column) order.
    pub assignment: Vec<Vec<SliceAssignment>>,
}

impl ImacTopology {
    /// Tiling of `layer_dims` under the 512-wide splitting rule.
    pub fn plan(layer_dims: &[usize], budget: SubarrayBudget) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer dimensions {layer_dims:?}")));
        }
        let mut next_id = 0;
        let mut assignment = Vec::with_capacity(layer_dims.len() - 1);
        for pair in layer_dims.windows(2) {
            let (inputs, outputs) = (pair[0], pair[1]);
            let mut tiles = Vec::new();
            for r0 in (0..outputs).step_by(MAX_SUBARRAY_DIM) {
                for c0 in (0..inputs).step_by(MAX_SUBARRAY_DIM) {
                    tiles.push(SliceAssignment {
                        subarray: next_id,
                        rows: r0..(r0 + MAX_SUBARRAY_DIM).min(outputs),
                        cols: c0..(c0 + MAX_SUBARRAY_DIM).min(inputs),
                    });
                    next_id += 1;
                }
            }
            assignment.push(tiles);
        }
        if next_id > budget.subarrays {
            return Err(Error::CapacityExceeded {
                needed: next_id,
                available: budget.subarrays,
            });
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            assignment,
        })
    }

    pub fn subarrays_used(&self) -> usize {
        self.assignment.iter().map(Vec::len).sum()
    }

    pub fn layer_count(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions {
    pub circuit: CircuitConfig,
    /// Encoding of the first layer's inputs; later layers see neuron outputs.
    pub input_encoding: InputEncoding,
    pub budget: SubarrayBudget,
    /// Per-layer amplifier gains; `None` uses the matched gain.
    pub layer_gains: Option<Vec<f64>>,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            circuit: CircuitConfig::default(),
            input_encoding: InputEncoding::Pixel,
            budget: SubarrayBudget::default(),
            layer_gains: None,
        }
    }
}

#[derive(Debug, Clone)]
struct Tile {
    slice: SliceAssignment,
    array: Subarray,
}

#[derive(Debug, Clone)]
struct MappedLayer {
    inputs: usize,
    outputs: usize,
    encoding: InputEncoding,
    tiles: Vec<Tile>,
}

impl MappedLayer {
    fn forward(&self, x: &[f64], fidelity: Fidelity) -> Result<Vec<f64>> {
        if x.len() != self.inputs {
            return Err(Error::DimensionMismatch(format!(
                "layer expects {} inputs, got {}",
                self.inputs,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.outputs];
        let mut start = 0;
        while start < self.tiles.len() {
            let rows = self.tiles[start].slice.rows.clone();
            let end = start
                + self.tiles[start..]
                    .iter()
                    .take_while(|t| t.slice.rows == rows)
                    .count();
            let mut acc = vec![0.0; rows.len()];
            for tile in &self.tiles[start..end] {
                tile.array
                    .accumulate(&x[tile.slice.cols.clone()], fidelity, &mut acc)?;
            }
            let activated = self.tiles[end - 1].array.activate(&acc, fidelity);
            out[rows].copy_from_slice(&activated);
            start = end;
        }
        Ok(out)
    }

    fn gain(&self) -> f64 {
        self.tiles[0].array.amplifier().transimpedance_gain
    }

    fn parameters(&self) -> BinarizedLayer {
        let mut weights = vec![0i8; self.inputs * self.outputs];
        let mut biases = vec![0i8; self.outputs];
        for tile in &self.tiles {
            for (lr, r) in tile.slice.rows.clone().enumerate() {
                for (lc, c) in tile.slice.cols.clone().enumerate() {
                    weights[r * self.inputs + c] = tile.array.weight(lr, lc);
                }
                if let Some(b) = tile.array.bias(lr) {
                    biases[r] = b;
                }
            }
        }
        BinarizedLayer {
            weights: BinaryMatrix::new(self.outputs, self.inputs, weights).expect("programmed cells are ±1"),
            biases,
        }
    }
}

/// Result of one inference: normalized neuron outputs and their argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub scores: Vec<f64>,
    pub label: usize,
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A programmed multi-layer IMAC network. Immutable once mapped.
#[derive(Debug, Clone)]
pub struct ImacNetwork {
    topology: ImacTopology,
    circuit: CircuitConfig,
    layers: Vec<MappedLayer>,
}

/// Programs `params` onto subarrays according to the splitting rule.
pub fn map_network(params: &TrainedParameters, options: &MapOptions) -> Result<ImacNetwork> {
    let params = TrainedParameters::new(params.layers.clone())?;
    let topology = ImacTopology::plan(&params.dims(), options.budget)?;
    if let Some(g) = &options.layer_gains {
        if g.len() != params.layers.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} gains for {} layers",
                g.len(),
                params.layers.len()
            )));
        }
    }
    let mut layers = Vec::with_capacity(params.layers.len());
    for (k, (layer, slices)) in params.layers.iter().zip(&topology.assignment).enumerate() {
        let encoding = if k == 0 {
            options.input_encoding
        } else {
            InputEncoding::Activation
        };
        let mut tiles = Vec::with_capacity(slices.len());
        for (i, slice) in slices.iter().enumerate() {
            let last_in_row_group = slices.get(i + 1).map_or(true, |next| next.rows != slice.rows);
            let config = SubarrayConfig {
                n_inputs: slice.cols.len(),
                m_rows: slice.rows.len(),
                bias_column: last_in_row_group,
                circuit: options.circuit,
                encoding,
                transimpedance_gain: options.layer_gains.as_ref().map(|g| g[k]),
            };
            let mut array = Subarray::new(config)?;
            let weights = layer.weights.block(slice.rows.clone(), slice.cols.clone());
            let biases = last_in_row_group.then(|| &layer.biases[slice.rows.clone()]);
            array.program(&weights, biases)?;
            tiles.push(Tile {
                slice: slice.clone(),
                array,
            });
        }
        layers.push(MappedLayer {
            inputs: layer.inputs(),
            outputs: layer.outputs(),
            encoding,
            tiles,
        });
    }
    Ok(ImacNetwork {
        topology,
        circuit: options.circuit,
        layers,
    })
}

impl ImacNetwork {
    pub fn topology(&self) -> &ImacTopology {
        &self.topology
    }

    pub fn circuit(&self) -> &CircuitConfig {
        &self.circuit
    }

    pub fn input_dim(&self) -> usize {
        self.topology.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.topology.layer_dims.last().expect("at least two dims")
    }

    pub fn input_encoding(&self) -> InputEncoding {
        self.layers[0].encoding
    }

    /// Total write cycles to program every tile (one per tile row).
    pub fn programming_cycles(&self) -> usize {
        self.topology
            .assignment
            .iter()
            .flatten()
            .map(|s| s.rows.len())
            .sum()
    }

    pub fn layer_gains(&self) -> Vec<f64> {
        self.layers.iter().map(MappedLayer::gain).collect()
    }

    /// Reads the programmed cell states back into binary parameters.
    pub fn parameters(&self) -> TrainedParameters {
        TrainedParameters {
            layers: self.layers.iter().map(MappedLayer::parameters).collect(),
        }
    }

    /// Inference in the network's configured fidelity.
    pub fn infer(&self, input: &[f64]) -> Result<Inference> {
        self.infer_with(input, self.circuit.fidelity)
    }

    /// Layer-by-layer forward pass; activations stay analog between layers.
    pub fn infer_with(&self, input: &[f64], fidelity: Fidelity) -> Result<Inference> {
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer.forward(&x, fidelity)?;
        }
        Ok(Inference {
            label: argmax(&x),
            scores: x,
        })
    }

    /// Classification accuracy over a feature set.
    pub fn evaluate(&self, set: &FeatureSet, fidelity: Fidelity) -> Result<f64> {
        if set.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network takes {} inputs, feature set has {}",
                self.input_dim(),
                set.dim()
            )));
        }
        if set.is_empty() {
            return Ok(0.0);
        }
        let correct: usize = (0..set.len())
            .into_par_iter()
            .map(|i| {
                self.infer_with(&set.sample_f64(i), fidelity)
                    .map(|inf| usize::from(inf.label == set.label(i) as usize))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        Ok(correct as f64 / set.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::oracle::brute_force_network;

    pub(crate) fn random_params(dims: &[usize], seed: u64) -> TrainedParameters {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sign = move || if rng.gen::<bool>() { 1i8 } else { -1 };
        let layers = dims
            .windows(2)
            .map(|p| {
                let w: Vec<i8> = (0..p[0] * p[1]).map(|_| sign()).collect();
                let b: Vec<i8> = (0..p[1]).map(|_| sign()).collect();
                BinarizedLayer::new(BinaryMatrix::new(p[1], p[0], w).unwrap(), b).unwrap()
            })
            .collect();
        TrainedParameters::new(layers).unwrap()
    }

    #[test]
    fn mnist_mlp_splits_first_layer() {
        let p = random_params(&[784, 16, 10], 1);
        let net = map_network(&p, &MapOptions::default()).unwrap();
        let t = net.topology();
        assert_eq!(t.layer_count(), 2);
        assert_eq!(t.assignment[0].len(), 2);
        assert_eq!(t.assignment[0][0].cols, 0..512);
        assert_eq!(t.assignment[0][1].cols, 512..784);
        assert_eq!(t.assignment[1].len(), 1);
        assert!(t.subarrays_used() <= SubarrayBudget::default().subarrays);
        assert_eq!(SubarrayBudget::default().capacity_bytes(), 128 * 1024);
        assert_eq!(net.parameters(), p);
    }

    #[test]
    fn toy_net_uses_one_slice() {
        let p = random_params(&[4, 2], 2);
        let net = map_network(&p, &MapOptions::default()).unwrap();
        assert_eq!(net.topology().subarrays_used(), 1);
        assert_eq!(net.programming_cycles(), 2);
    }

    #[test]
    fn capacity_and_shape_errors() {
        let p = random_params(&[1024, 600, 10], 3);
        assert!(matches!(
            map_network(&p, &MapOptions::default()),
            Err(Error::CapacityExceeded { needed: 6, available: 4 })
        ));
        let bad = TrainedParameters {
            layers: vec![random_params(&[4, 3], 1).layers[0].clone(), random_params(&[4, 2], 1).layers[0].clone()],
        };
        assert!(map_network(&bad, &MapOptions::default()).is_err());
    }

    #[test]
    fn zero_input_all_positive_bias() {
        let l1 = BinarizedLayer::new(BinaryMatrix::filled(3, 5, -1).unwrap(), vec![1; 3]).unwrap();
        let l2 = BinarizedLayer::new(BinaryMatrix::filled(2, 3, 1).unwrap(), vec![1; 2]).unwrap();
        let p = TrainedParameters::new(vec![l1.clone(), l2]).unwrap();
        let first = TrainedParameters::new(vec![l1]).unwrap();
        let net = map_network(&first, &MapOptions::default()).unwrap();
        for o in net.infer(&[0.0; 5]).unwrap().scores {
            assert!((o - 0.2689414213699951).abs() < 1e-15);
        }
        let net = map_network(&p, &MapOptions::default()).unwrap();
        assert!(net.infer(&[0.0; 4]).is_err());
    }

    #[test]
    fn two_layer_toy_matches_composition() {
        let p = random_params(&[6, 4, 3], 9);
        let net = map_network(&p, &MapOptions::default()).unwrap();
        let x = [0.1, 0.9, 0.0, 1.0, 0.5, 0.25];
        assert_eq!(net.infer(&x).unwrap().scores, brute_force_network(&p, &x));
    }

    #[test]
    fn argmax_ties_resolve_low() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.7]), 0);
    }

    #[test]
    fn row_split_layers() {
        let p = random_params(&[20, 600], 4);
        let net = map_network(&p, &MapOptions::default()).unwrap();
        assert_eq!(net.topology().assignment[0].len(), 2);
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        assert_eq!(net.infer(&x).unwrap().scores, brute_force_network(&p, &x));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn ideal_inference_matches_oracle(
            dims in proptest::collection::vec(1usize..40, 2..5),
            seed in any::<u64>(),
        ) {
            let p = random_params(&dims, seed);
            let net = map_network(&p, &MapOptions::default()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(0.0..1.0)).collect();
            let got = net.infer(&x).unwrap().scores;
            let want = brute_force_network(&p, &x);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12);
            }
        }

        #[test]
        fn splitting_does_not_change_outputs(n in 513usize..1100, m in 1usize..5, seed in any::<u64>()) {
            let p = random_params(&[n, m], seed);
            let net = map_network(&p, &MapOptions { budget: SubarrayBudget::unlimited(), ..Default::default() }).unwrap();
            prop_assert!(net.topology().assignment[0].len() >= 2);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            // The unsplit reference sums all columns in one pass.
            prop_assert_eq!(net.infer(&x).unwrap().scores, brute_force_network(&p, &x));
        }
    }
}
