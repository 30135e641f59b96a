//! Independent reference implementations.
//!
//! Nothing here calls into the crossbar, network or protocol code: the
//! references are written directly from the closed forms (σ(−(Wx+B)) and
//! its layer composition) or, for the transfer protocol, from a regular
//! expression over the event alphabet. The unit tests and the `selftest`
//! command compare the simulator against these.

use regex::Regex;

use crate::binary::{BinaryMatrix, TrainedParameters};

/// σ(−(W·x + B)) for one layer, summing columns in index order.
pub fn brute_force_layer(weights: &BinaryMatrix, biases: &[i8], x: &[f64]) -> Vec<f64> {
    (0..weights.rows())
        .map(|r| {
            let mut s = 0.0;
            for c in 0..weights.cols() {
                s += f64::from(weights.get(r, c)) * x[c];
            }
            s += f64::from(biases[r]);
            1.0 / (1.0 + s.exp())
        })
        .collect()
}

/// Layer-by-layer composition of [`brute_force_layer`].
pub fn brute_force_network(params: &TrainedParameters, x: &[f64]) -> Vec<f64> {
    params.layers.iter().fold(x.to_vec(), |acc, layer| {
        brute_force_layer(&layer.weights, &layer.biases, &acc)
    })
}

/// Abstract CPU/IMAC event used to describe protocol interleavings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolOp {
    /// `store_imac` to the ready register with the given value.
    SetReady(i8),
    /// `store_imac` to a data slot (1-based buffer address).
    StoreData(u16),
    /// IMAC finishes its computation (timer expiry).
    Compute,
    /// `load_imac` from a data slot (1-based buffer address).
    LoadData(u16),
    /// `load_imac` of the ready register; legal at any time.
    LoadReady,
}

/// Regular-language reference for the handshake:
/// `(store-ready-0 store-data* store-ready-1 compute load-data*)*` and any
/// prefix thereof. Address bounds are checked separately.
pub struct ProtocolGrammar {
    re: Regex,
    input_slots: u16,
    output_slots: u16,
}

impl ProtocolGrammar {
    pub fn new(input_slots: u16, output_slots: u16) -> Self {
        Self {
            re: Regex::new(r"^(0d*1cl*)*(0d*1?)?$").expect("static pattern"),
            input_slots,
            output_slots,
        }
    }

    pub fn accepts(&self, ops: &[ProtocolOp]) -> bool {
        let mut word = String::with_capacity(ops.len());
        for op in ops {
            match *op {
                ProtocolOp::SetReady(0) => word.push('0'),
                ProtocolOp::SetReady(1) => word.push('1'),
                ProtocolOp::SetReady(_) => word.push('x'),
                ProtocolOp::StoreData(a) if a >= 1 && a <= self.input_slots => word.push('d'),
                ProtocolOp::StoreData(_) => word.push('x'),
                ProtocolOp::Compute => word.push('c'),
                ProtocolOp::LoadData(a) if a >= 1 && a <= self.output_slots => word.push('l'),
                ProtocolOp::LoadData(_) => word.push('x'),
                ProtocolOp::LoadReady => {}
            }
        }
        self.re.is_match(&word)
    }
}
