//! Self-check suites comparing the simulator against the references in
//! [`crate::oracle`]. The `selftest` command and the acceptance tests run
//! these.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binary::{BinarizedLayer, BinaryMatrix, TrainedParameters};
use crate::circuits::{CircuitConfig, Fidelity, InputEncoding};
use crate::error::Result;
use crate::network::{export_netlist, map_network, parse_netlist, MapOptions, SubarrayBudget};
use crate::oracle::{brute_force_network, ProtocolGrammar, ProtocolOp};
use crate::pipeline::{Coprocessor, Output, TransferProtocolState, TRIT_CAPACITY};
use crate::rng::{Seeds, Stream};
use crate::training::{gradient_check, toy_conv_spec, Cnn, GradientCheck};

/// Network with uniformly random ±1 weights and biases.
pub fn random_parameters(rng: &mut impl Rng, dims: &[usize]) -> TrainedParameters {
    let layers = dims
        .windows(2)
        .map(|w| {
            let data = (0..w[0] * w[1]).map(|_| if rng.gen() { 1 } else { -1 }).collect();
            let weights = BinaryMatrix::new(w[1], w[0], data).expect("sized data");
            let biases = (0..w[1]).map(|_| if rng.gen() { 1 } else { -1 }).collect();
            BinarizedLayer::new(weights, biases).expect("matching biases")
        })
        .collect();
    TrainedParameters::new(layers).expect("chained layers")
}

fn random_input(rng: &mut impl Rng, encoding: InputEncoding, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match encoding {
            InputEncoding::Trit => f64::from(rng.gen_range(-1i8..=1)),
            _ => rng.gen::<f64>(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub networks: usize,
    pub inferences: usize,
    pub max_abs_error: f64,
}

fn compare(params: &TrainedParameters, options: &MapOptions, inputs: &[Vec<f64>]) -> Result<f64> {
    let net = map_network(params, options)?;
    let mut worst = 0.0f64;
    for x in inputs {
        let got = net.infer_with(x, Fidelity::Ideal)?.scores;
        let want = brute_force_network(params, x);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Every 2×2 layer with ±1 weights and biases, on every input in
/// {−1, 0, 1}².
pub fn crossbar_exhaustive(circuit: &CircuitConfig) -> Result<OracleReport> {
    let inputs: Vec<Vec<f64>> = (0..9).map(|i| vec![f64::from(i / 3 - 1), f64::from(i % 3 - 1)]).collect();
    let mut worst = 0.0f64;
    for bits in 0u32..64 {
        let sign = |k: u32| if bits >> k & 1 == 1 { 1 } else { -1 };
        let weights = BinaryMatrix::new(2, 2, (0..4).map(sign).collect())?;
        let layer = BinarizedLayer::new(weights, vec![sign(4), sign(5)])?;
        let params = TrainedParameters::new(vec![layer])?;
        let options = MapOptions {
            circuit: *circuit,
            input_encoding: InputEncoding::Trit,
            ..Default::default()
        };
        worst = worst.max(compare(&params, &options, &inputs)?);
    }
    Ok(OracleReport {
        networks: 64,
        inferences: 64 * inputs.len(),
        max_abs_error: worst,
    })
}

/// `count` random networks of one to three layers with every width in
/// 1..=`max_dim`, each checked on two random inputs.
pub fn crossbar_random(seed: u64, count: usize, max_dim: usize) -> Result<OracleReport> {
    let seeds = Seeds::new(seed);
    let worst = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.child(i as u64).stream(Stream::Data);
            let depth = rng.gen_range(1..=3);
            let dims: Vec<usize> = (0..=depth).map(|_| rng.gen_range(1..=max_dim)).collect();
            let params = random_parameters(&mut rng, &dims);
            let encoding = [InputEncoding::Pixel, InputEncoding::Trit, InputEncoding::Activation][rng.gen_range(0..3)];
            let options = MapOptions {
                input_encoding: encoding,
                budget: SubarrayBudget::unlimited(),
                ..Default::default()
            };
            let inputs: Vec<Vec<f64>> = (0..2).map(|_| random_input(&mut rng, encoding, dims[0])).collect();
            compare(&params, &options, &inputs)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(OracleReport {
        networks: count,
        inferences: 2 * count,
        max_abs_error: worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetlistReport {
    pub topologies: usize,
    pub byte_identical: usize,
    pub inference_identical: usize,
}

/// Export, parse and re-export `count` random networks. Every tenth one has
/// an input wider than a subarray so that row tiling is exercised.
pub fn netlist_round_trips(seed: u64, count: usize) -> Result<NetlistReport> {
    let seeds = Seeds::new(seed);
    let results = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds.child(i as u64).stream(Stream::Data);
            let mut dims: Vec<usize> = (0..=rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=48)).collect();
            if i % 10 == 0 {
                dims[0] = rng.gen_range(513..=600);
            }
            let encoding = [InputEncoding::Pixel, InputEncoding::Trit, InputEncoding::Activation][rng.gen_range(0..3)];
            let net = map_network(
                &random_parameters(&mut rng, &dims),
                &MapOptions {
                    input_encoding: encoding,
                    budget: SubarrayBudget::unlimited(),
                    ..Default::default()
                },
            )?;
            let text = export_netlist(&net)?;
            let parsed = parse_netlist(&text)?;
            let bytes_equal = export_netlist(&parsed)? == text;
            let mut same = true;
            for _ in 0..3 {
                let x = random_input(&mut rng, encoding, dims[0]);
                let a = net.infer_with(&x, Fidelity::Ideal)?.scores;
                let b = parsed.infer_with(&x, Fidelity::Ideal)?.scores;
                same &= a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits());
            }
            Ok((bytes_equal, same))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetlistReport {
        topologies: count,
        byte_identical: results.iter().filter(|r| r.0).count(),
        inference_identical: results.iter().filter(|r| r.1).count(),
    })
}

/// Coprocessor stub that returns a code derived from the sum of its inputs.
#[derive(Debug, Clone)]
pub struct EchoDevice {
    pub outputs: usize,
    pub latency: u64,
}

impl Coprocessor for EchoDevice {
    fn timer_cycles(&self, _trits: usize) -> u64 {
        self.latency
    }

    fn execute(&mut self, trits: &[i8]) -> Result<Vec<Output>> {
        let s: i32 = trits.iter().map(|&t| i32::from(t)).sum();
        Ok((0..self.outputs).map(|i| Output::Code((s + i as i32).rem_euclid(8) as u8)).collect())
    }
}

/// Random word of the handshake language: whole fill/compute/read rounds,
/// optionally followed by a partial fill, with ready-register polls
/// sprinkled in.
pub fn random_legal_ops(rng: &mut impl Rng, inputs: u16, outputs: u16) -> Vec<ProtocolOp> {
    let mut ops = Vec::new();
    let peek = |rng: &mut dyn rand::RngCore, ops: &mut Vec<ProtocolOp>| {
        if rng.gen_bool(0.2) {
            ops.push(ProtocolOp::LoadReady);
        }
    };
    for _ in 0..rng.gen_range(0..4) {
        ops.push(ProtocolOp::SetReady(0));
        for _ in 0..rng.gen_range(0..6) {
            peek(rng, &mut ops);
            ops.push(ProtocolOp::StoreData(rng.gen_range(1..=inputs)));
        }
        ops.push(ProtocolOp::SetReady(1));
        peek(rng, &mut ops);
        ops.push(ProtocolOp::Compute);
        for _ in 0..rng.gen_range(0..4) {
            ops.push(ProtocolOp::LoadData(rng.gen_range(1..=outputs)));
            peek(rng, &mut ops);
        }
    }
    if rng.gen_bool(0.3) {
        ops.push(ProtocolOp::SetReady(0));
        for _ in 0..rng.gen_range(0..3) {
            ops.push(ProtocolOp::StoreData(rng.gen_range(1..=inputs)));
        }
        if rng.gen_bool(0.5) {
            ops.push(ProtocolOp::SetReady(1));
        }
    }
    ops
}

/// Any single operation, including illegal register values and addresses
/// one or two past the ends of the buffer.
pub fn random_op(rng: &mut impl Rng, inputs: u16, outputs: u16) -> ProtocolOp {
    match rng.gen_range(0..5) {
        0 => ProtocolOp::SetReady([-1, 0, 1][rng.gen_range(0..3)]),
        1 => ProtocolOp::StoreData(rng.gen_range(1..=inputs + 2)),
        2 => ProtocolOp::Compute,
        3 => ProtocolOp::LoadData(rng.gen_range(1..=outputs + 2)),
        _ => ProtocolOp::LoadReady,
    }
}

/// A legal word with random operations inserted until the grammar rejects
/// it.
pub fn random_illegal_ops(rng: &mut impl Rng, grammar: &ProtocolGrammar, inputs: u16, outputs: u16) -> Vec<ProtocolOp> {
    let mut ops = random_legal_ops(rng, inputs, outputs);
    while grammar.accepts(&ops) {
        let at = rng.gen_range(0..=ops.len());
        ops.insert(at, random_op(rng, inputs, outputs));
    }
    ops
}

/// Whether the state machine executes every operation without error.
pub fn machine_accepts(ops: &[ProtocolOp], outputs: u16) -> bool {
    let mut p = TransferProtocolState::new(EchoDevice {
        outputs: usize::from(outputs),
        latency: 3,
    });
    ops.iter().all(|&op| p.apply(op).is_ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolReport {
    pub legal: usize,
    pub illegal: usize,
    pub false_rejects: usize,
    pub false_accepts: usize,
}

pub fn protocol_suite(seed: u64, legal: usize, illegal: usize) -> ProtocolReport {
    const OUTPUTS: u16 = 10;
    let inputs = TRIT_CAPACITY as u16;
    let grammar = ProtocolGrammar::new(inputs, OUTPUTS);
    let mut rng: ChaCha8Rng = Seeds::new(seed).stream(Stream::Protocol);
    let mut report = ProtocolReport {
        legal,
        illegal,
        false_rejects: 0,
        false_accepts: 0,
    };
    for _ in 0..legal {
        let ops = random_legal_ops(&mut rng, inputs, OUTPUTS);
        debug_assert!(grammar.accepts(&ops));
        if !machine_accepts(&ops, OUTPUTS) {
            report.false_rejects += 1;
        }
    }
    for _ in 0..illegal {
        let ops = random_illegal_ops(&mut rng, &grammar, inputs, OUTPUTS);
        if machine_accepts(&ops, OUTPUTS) {
            report.false_accepts += 1;
        }
    }
    report
}

/// Central-difference check of the step-1 gradients on the toy
/// convolution fixture.
pub fn toy_gradient_check(seed: u64) -> Result<GradientCheck> {
    let seeds = Seeds::new(seed);
    let net: Cnn<f64> = Cnn::new(toy_conv_spec(), &mut seeds.stream(Stream::Init))?;
    let mut rng = seeds.stream(Stream::Data);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let label = rng.gen_range(0..toy_conv_spec().classes());
    Ok(gradient_check(&net, &x, label, 1e-5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_at_small_scale() {
        assert!(crossbar_exhaustive(&CircuitConfig::default()).unwrap().max_abs_error <= 1e-12);
        assert!(crossbar_random(1, 20, 40).unwrap().max_abs_error <= 1e-12);
        let n = netlist_round_trips(2, 10).unwrap();
        assert_eq!((n.byte_identical, n.inference_identical), (10, 10));
        let p = protocol_suite(3, 200, 200);
        assert_eq!((p.false_rejects, p.false_accepts), (0, 0));
        assert!(toy_gradient_check(4).unwrap().max_relative_error < 1e-4);
    }
}
