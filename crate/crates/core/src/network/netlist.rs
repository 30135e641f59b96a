//! Line-oriented netlist for mapped IMAC networks.
//!
//! ```text
//! * comment
//! DEVICE RA=<Ω·µm²> TMR0=<%> V0=<V> L=<nm> W=<nm> HML=<nm> HMW=<nm> HMT=<nm> VB=<V>
//! SUPPLY VDD=<V> VSS=<V>
//! SUBCKT L<k> IN=<n> OUT=<m> ENC=PIXEL|TRIT|ACTIVATION
//! XCELL <r> <c> STATE=P|AP R=<ohms>
//! XAMP <r> GAIN=<V/A>
//! XNEURON <r> K=<1/V> B=<V>
//! ENDS
//! CONNECT L<k> L<k+1>
//! ```
//!
//! Cell column `2j` is the I⁺ device of synapse `j` and `2j+1` its I⁻
//! device; synapse `j = IN` is the bias column. Resistances are annotated
//! at zero junction bias. Output ordering is fixed, so exporting the same
//! network twice produces identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::binary::{BinarizedLayer, BinaryMatrix, TrainedParameters};
use crate::circuits::{CircuitConfig, InputEncoding, NeuronParams, SynapsePair};
use crate::device::{BiasPoint, DeviceParams, DeviceState};
use crate::error::{Error, Result};

use super::{map_network, ImacNetwork, MapOptions, SubarrayBudget};

pub fn export_netlist(network: &ImacNetwork) -> Result<String> {
    let circuit = network.circuit();
    let d = &circuit.device;
    let n = &circuit.neuron;
    let r_p = d.resistance(DeviceState::P, BiasPoint::ZERO)?;
    let r_ap = d.resistance(DeviceState::AP, BiasPoint::ZERO)?;
    let resistance = |s: DeviceState| match s {
        DeviceState::P => r_p,
        DeviceState::AP => r_ap,
    };

    let params = network.parameters();
    let gains = network.layer_gains();
    let mut out = String::new();
    let dims = network.topology().layer_dims.clone();
    let _ = writeln!(out, "* IMAC network {}", join_dims(&dims));
    let _ = writeln!(
        out,
        "DEVICE RA={} TMR0={} V0={} L={} W={} HML={} HMW={} HMT={} VB={}",
        d.ra_product, d.tmr0, d.v0, d.mtj_length, d.mtj_width, d.hm_dims[0], d.hm_dims[1], d.hm_dims[2],
        circuit.read_bias.v_b
    );
    let _ = writeln!(out, "SUPPLY VDD={} VSS={}", n.vdd, n.vss);
    for (k, layer) in params.layers.iter().enumerate() {
        let idx = k + 1;
        if k > 0 {
            let _ = writeln!(out, "CONNECT L{} L{}", k, idx);
        }
        let encoding = if k == 0 {
            network.input_encoding()
        } else {
            InputEncoding::Activation
        };
        let _ = writeln!(
            out,
            "SUBCKT L{idx} IN={} OUT={} ENC={}",
            layer.inputs(),
            layer.outputs(),
            encoding.as_str()
        );
        for r in 0..layer.outputs() {
            let row = layer.weights.row(r).iter().copied().chain(std::iter::once(layer.biases[r]));
            for (j, w) in row.enumerate() {
                let pair = SynapsePair::from_weight(w)?;
                for (c, state) in [(2 * j, pair.plus), (2 * j + 1, pair.minus)] {
                    let _ = writeln!(out, "XCELL {r} {c} STATE={} R={}", state.as_str(), resistance(state));
                }
            }
            let _ = writeln!(out, "XAMP {r} GAIN={}", gains[k]);
            let _ = writeln!(out, "XNEURON {r} K={} B={}", n.slope_k, n.bias_midpoint());
        }
        let _ = writeln!(out, "ENDS");
    }
    Ok(out)
}

fn join_dims(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                tokens.push(Token {
                    text: &line[s..i],
                    column: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &line[s..],
            column: s + 1,
        });
    }
    tokens
}

struct CardParser<'a> {
    line: usize,
    tokens: Vec<Token<'a>>,
    end_column: usize,
}

impl<'a> CardParser<'a> {
    fn positional<T: FromStr>(&self, index: usize, what: &str) -> Result<T> {
        let tok = self
            .tokens
            .get(index)
            .ok_or_else(|| Error::syntax(self.line, self.end_column, format!("missing {what}")))?;
        tok.text
            .parse()
            .map_err(|_| Error::syntax(self.line, tok.column, format!("invalid {what} `{}`", tok.text)))
    }

    /// Parses `KEY=value` tokens from `from` onwards; every key in `keys`
    /// must appear exactly once and nothing else may.
    fn keyed(&self, from: usize, keys: &[&str]) -> Result<BTreeMap<String, (String, usize)>> {
        let mut map = BTreeMap::new();
        for tok in &self.tokens[from.min(self.tokens.len())..] {
            let (k, v) = tok
                .text
                .split_once('=')
                .ok_or_else(|| Error::syntax(self.line, tok.column, format!("expected KEY=value, got `{}`", tok.text)))?;
            if !keys.contains(&k) {
                return Err(Error::syntax(self.line, tok.column, format!("unexpected key `{k}`")));
            }
            if map.insert(k.to_string(), (v.to_string(), tok.column + k.len() + 1)).is_some() {
                return Err(Error::syntax(self.line, tok.column, format!("duplicate key `{k}`")));
            }
        }
        if let Some(missing) = keys.iter().find(|k| !map.contains_key(**k)) {
            return Err(Error::syntax(self.line, self.end_column, format!("missing {missing}=")));
        }
        Ok(map)
    }

    fn value<T: FromStr>(&self, map: &BTreeMap<String, (String, usize)>, key: &str) -> Result<T> {
        let (v, col) = &map[key];
        v.parse()
            .map_err(|_| Error::syntax(self.line, *col, format!("invalid value `{v}` for {key}")))
    }

    fn layer_ref(&self, index: usize) -> Result<usize> {
        let tok = self
            .tokens
            .get(index)
            .ok_or_else(|| Error::syntax(self.line, self.end_column, "missing layer name"))?;
        tok.text
            .strip_prefix('L')
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::syntax(self.line, tok.column, format!("invalid layer name `{}`", tok.text)))
    }

    fn expect_len(&self, n: usize) -> Result<()> {
        if let Some(extra) = self.tokens.get(n) {
            return Err(Error::syntax(self.line, extra.column, format!("unexpected token `{}`", extra.text)));
        }
        Ok(())
    }
}

struct LayerBuilder {
    index: usize,
    line: usize,
    inputs: usize,
    outputs: usize,
    encoding: InputEncoding,
    cells: Vec<Option<DeviceState>>,
    gains: Vec<Option<f64>>,
    neurons: Vec<bool>,
}

impl LayerBuilder {
    fn finish(self, end_line: usize) -> Result<(BinarizedLayer, f64)> {
        let cols = 2 * (self.inputs + 1);
        let mut weights = Vec::with_capacity(self.inputs * self.outputs);
        let mut biases = Vec::with_capacity(self.outputs);
        for r in 0..self.outputs {
            for j in 0..=self.inputs {
                let plus = self.cells[r * cols + 2 * j];
                let minus = self.cells[r * cols + 2 * j + 1];
                let (Some(plus), Some(minus)) = (plus, minus) else {
                    return Err(Error::syntax(
                        end_line,
                        1,
                        format!("L{} is missing cells of synapse ({r}, {j})", self.index),
                    ));
                };
                let w = SynapsePair { plus, minus }.weight().ok_or_else(|| {
                    Error::syntax(
                        end_line,
                        1,
                        format!("L{} synapse ({r}, {j}) is not a legal ±1 pair", self.index),
                    )
                })?;
                if j == self.inputs {
                    biases.push(w);
                } else {
                    weights.push(w);
                }
            }
            if !self.neurons[r] {
                return Err(Error::syntax(end_line, 1, format!("L{} row {r} has no XNEURON", self.index)));
            }
        }
        let gain = self.gains[0].ok_or_else(|| Error::syntax(end_line, 1, format!("L{} row 0 has no XAMP", self.index)))?;
        for (r, g) in self.gains.iter().enumerate() {
            match g {
                None => return Err(Error::syntax(end_line, 1, format!("L{} row {r} has no XAMP", self.index))),
                Some(g) if *g != gain => {
                    return Err(Error::syntax(
                        end_line,
                        1,
                        format!("L{} amplifier gains differ between rows", self.index),
                    ))
                }
                _ => {}
            }
        }
        let layer = BinarizedLayer::new(BinaryMatrix::new(self.outputs, self.inputs, weights)?, biases)?;
        Ok((layer, gain))
    }
}

/// Parses a netlist produced by [`export_netlist`] (or written by hand
/// in the same grammar) and re-maps it onto subarrays.
pub fn parse_netlist(text: &str) -> Result<ImacNetwork> {
    let mut device = DeviceParams::default();
    let mut read_bias = BiasPoint::ZERO;
    let mut supply: Option<(f64, f64)> = None;
    let mut slope: Option<f64> = None;
    let mut current: Option<LayerBuilder> = None;
    let mut layers: Vec<(BinarizedLayer, f64, InputEncoding)> = Vec::new();
    let mut connects: Vec<(usize, usize, usize)> = Vec::new();
    let mut last_line = 0;

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let tokens = tokenize(line);
        if tokens.is_empty() || tokens[0].text.starts_with('*') {
            continue;
        }
        last_line = line_no;
        let card = CardParser {
            line: line_no,
            end_column: line.trim_end().len() + 1,
            tokens,
        };
        let name = card.tokens[0].text;
        let in_layer = current.is_some();
        match name {
            "DEVICE" | "SUPPLY" | "CONNECT" | "SUBCKT" if in_layer => {
                return Err(Error::syntax(line_no, 1, format!("{name} inside SUBCKT (missing ENDS?)")));
            }
            "XCELL" | "XAMP" | "XNEURON" | "ENDS" if !in_layer => {
                return Err(Error::syntax(line_no, 1, format!("{name} outside SUBCKT")));
            }
            _ => {}
        }
        match name {
            "DEVICE" => {
                let m = card.keyed(1, &["RA", "TMR0", "V0", "L", "W", "HML", "HMW", "HMT", "VB"])?;
                device = DeviceParams {
                    ra_product: card.value(&m, "RA")?,
                    tmr0: card.value(&m, "TMR0")?,
                    v0: card.value(&m, "V0")?,
                    mtj_length: card.value(&m, "L")?,
                    mtj_width: card.value(&m, "W")?,
                    hm_dims: [card.value(&m, "HML")?, card.value(&m, "HMW")?, card.value(&m, "HMT")?],
                };
                device
                    .validate()
                    .map_err(|e| Error::syntax(line_no, 1, e.to_string()))?;
                read_bias = BiasPoint { v_b: card.value(&m, "VB")? };
            }
            "SUPPLY" => {
                let m = card.keyed(1, &["VDD", "VSS"])?;
                supply = Some((card.value(&m, "VDD")?, card.value(&m, "VSS")?));
            }
            "SUBCKT" => {
                let index = card.layer_ref(1)?;
                if index != layers.len() + 1 {
                    return Err(Error::syntax(
                        line_no,
                        card.tokens[1].column,
                        format!("expected L{}, found L{index}", layers.len() + 1),
                    ));
                }
                let m = card.keyed(2, &["IN", "OUT", "ENC"])?;
                let inputs: usize = card.value(&m, "IN")?;
                let outputs: usize = card.value(&m, "OUT")?;
                let encoding: InputEncoding = card.value(&m, "ENC")?;
                if inputs == 0 || outputs == 0 {
                    return Err(Error::syntax(line_no, 1, "layer dimensions must be positive"));
                }
                let cols = 2 * (inputs + 1);
                current = Some(LayerBuilder {
                    index,
                    line: line_no,
                    inputs,
                    outputs,
                    encoding,
                    cells: vec![None; outputs * cols],
                    gains: vec![None; outputs],
                    neurons: vec![false; outputs],
                });
            }
            "XCELL" => {
                let b = current.as_mut().expect("checked above");
                let r: usize = card.positional(1, "row")?;
                let c: usize = card.positional(2, "column")?;
                let cols = 2 * (b.inputs + 1);
                if r >= b.outputs || c >= cols {
                    return Err(Error::syntax(
                        line_no,
                        card.tokens[1].column,
                        format!("cell ({r}, {c}) is outside the {}×{cols} array of L{}", b.outputs, b.index),
                    ));
                }
                let m = card.keyed(3, &["STATE", "R"])?;
                let state: DeviceState = card.value(&m, "STATE")?;
                let annotated: f64 = card.value(&m, "R")?;
                let expected = device.resistance(state, BiasPoint::ZERO)?;
                if !((annotated - expected).abs() <= 1e-6 * expected) {
                    return Err(Error::syntax(
                        line_no,
                        m["R"].1,
                        format!("R={annotated} does not match the {} resistance {expected}", state.as_str()),
                    ));
                }
                let slot = &mut b.cells[r * cols + c];
                if slot.is_some() {
                    return Err(Error::syntax(line_no, 1, format!("duplicate cell ({r}, {c})")));
                }
                *slot = Some(state);
            }
            "XAMP" => {
                let b = current.as_mut().expect("checked above");
                let r: usize = card.positional(1, "row")?;
                if r >= b.outputs {
                    return Err(Error::syntax(line_no, card.tokens[1].column, format!("row {r} out of range")));
                }
                let m = card.keyed(2, &["GAIN"])?;
                let g: f64 = card.value(&m, "GAIN")?;
                if b.gains[r].replace(g).is_some() {
                    return Err(Error::syntax(line_no, 1, format!("duplicate XAMP for row {r}")));
                }
            }
            "XNEURON" => {
                let b = current.as_mut().expect("checked above");
                let r: usize = card.positional(1, "row")?;
                if r >= b.outputs {
                    return Err(Error::syntax(line_no, card.tokens[1].column, format!("row {r} out of range")));
                }
                let m = card.keyed(2, &["K", "B"])?;
                let k: f64 = card.value(&m, "K")?;
                let bias: f64 = card.value(&m, "B")?;
                match slope {
                    Some(s) if s != k => {
                        return Err(Error::syntax(line_no, m["K"].1, "neuron slopes differ between rows"));
                    }
                    _ => slope = Some(k),
                }
                let (vdd, vss) = supply.unwrap_or((NeuronParams::default().vdd, NeuronParams::default().vss));
                let midpoint = 0.5 * (vdd - vss);
                if (bias - midpoint).abs() > 1e-12 {
                    return Err(Error::syntax(line_no, m["B"].1, format!("B={bias} does not match the supply midpoint {midpoint}")));
                }
                if std::mem::replace(&mut b.neurons[r], true) {
                    return Err(Error::syntax(line_no, 1, format!("duplicate XNEURON for row {r}")));
                }
            }
            "ENDS" => {
                card.expect_len(1)?;
                let b = current.take().expect("checked above");
                let encoding = b.encoding;
                let (layer, gain) = b.finish(line_no)?;
                layers.push((layer, gain, encoding));
            }
            "CONNECT" => {
                let from = card.layer_ref(1)?;
                let to = card.layer_ref(2)?;
                card.expect_len(3)?;
                connects.push((from, to, line_no));
            }
            other => {
                return Err(Error::UnknownCard {
                    card: other.to_string(),
                    line: line_no,
                })
            }
        }
    }

    if let Some(b) = current {
        return Err(Error::syntax(
            last_line.max(b.line),
            1,
            format!("unexpected end of file inside SUBCKT L{} opened at line {}", b.index, b.line),
        ));
    }
    if layers.is_empty() {
        return Err(Error::syntax(last_line.max(1), 1, "netlist defines no SUBCKT"));
    }

    let mut incoming = vec![false; layers.len()];
    for &(from, to, line) in &connects {
        if from > layers.len() || to > layers.len() {
            return Err(Error::DanglingNode {
                line,
                message: format!("CONNECT L{from} L{to} references an undefined layer"),
            });
        }
        if to != from + 1 {
            return Err(Error::DanglingNode {
                line,
                message: format!("CONNECT L{from} L{to} does not join consecutive layers"),
            });
        }
        if layers[from - 1].0.outputs() != layers[to - 1].0.inputs() {
            return Err(Error::DanglingNode {
                line,
                message: format!(
                    "L{from} has {} outputs but L{to} has {} inputs",
                    layers[from - 1].0.outputs(),
                    layers[to - 1].0.inputs()
                ),
            });
        }
        if std::mem::replace(&mut incoming[to - 1], true) {
            return Err(Error::DanglingNode {
                line,
                message: format!("L{to} is connected twice"),
            });
        }
    }
    if let Some(k) = (1..layers.len()).find(|&k| !incoming[k]) {
        return Err(Error::DanglingNode {
            line: last_line,
            message: format!("L{} has no incoming CONNECT", k + 1),
        });
    }
    if let Some((k, _)) = layers
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, l)| l.2 != InputEncoding::Activation)
    {
        return Err(Error::syntax(last_line, 1, format!("L{} must use ENC=ACTIVATION", k + 1)));
    }

    let defaults = NeuronParams::default();
    let (vdd, vss) = supply.unwrap_or((defaults.vdd, defaults.vss));
    let neuron = NeuronParams {
        vdd,
        vss,
        slope_k: slope.unwrap_or(defaults.slope_k),
    };
    let circuit = CircuitConfig {
        device,
        neuron,
        read_bias,
        ..Default::default()
    };
    circuit.validate()?;
    let encoding = layers[0].2;
    let gains: Vec<f64> = layers.iter().map(|l| l.1).collect();
    let params = TrainedParameters::new(layers.into_iter().map(|l| l.0).collect())?;
    map_network(
        &params,
        &MapOptions {
            circuit,
            input_encoding: encoding,
            budget: SubarrayBudget::unlimited(),
            layer_gains: Some(gains),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::Fidelity;
    use crate::network::tests::random_params;

    fn toy() -> ImacNetwork {
        let layer = BinarizedLayer::new(BinaryMatrix::new(1, 2, vec![1, -1]).unwrap(), vec![1]).unwrap();
        map_network(&TrainedParameters::new(vec![layer]).unwrap(), &MapOptions::default()).unwrap()
    }

    #[test]
    fn toy_instance_counts() {
        let text = export_netlist(&toy()).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("XCELL")).count(), 6);
        assert_eq!(text.lines().filter(|l| l.starts_with("XAMP")).count(), 1);
        assert_eq!(text.lines().filter(|l| l.starts_with("XNEURON")).count(), 1);
        assert!(text.contains("XCELL 0 0 STATE=P R=8488.26"));
        assert!(text.contains("XCELL 0 1 STATE=AP R=25464.79"));
        assert!(text.contains("XCELL 0 2 STATE=AP R=25464.79"));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        for (i, dims) in [vec![3, 2], vec![5, 4, 3], vec![600, 3, 2]].iter().enumerate() {
            let net = map_network(&random_params(dims, i as u64), &MapOptions::default()).unwrap();
            let a = export_netlist(&net).unwrap();
            let parsed = parse_netlist(&a).unwrap();
            assert_eq!(export_netlist(&parsed).unwrap(), a);
            assert_eq!(parsed.parameters(), net.parameters());
            let x: Vec<f64> = (0..dims[0]).map(|k| (k % 7) as f64 / 7.0).collect();
            assert_eq!(parsed.infer(&x).unwrap(), net.infer(&x).unwrap());
            assert_eq!(
                parsed.infer_with(&x, Fidelity::Circuit).unwrap(),
                net.infer_with(&x, Fidelity::Circuit).unwrap()
            );
        }
    }

    #[test]
    fn truncated_file_names_line() {
        let text = export_netlist(&toy()).unwrap();
        let cut: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        match parse_netlist(&cut) {
            Err(Error::NetlistSyntax { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("end of file"), "{message}");
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        let half = &text[..text.find("R=25464").unwrap() + 4];
        assert!(matches!(parse_netlist(half), Err(Error::NetlistSyntax { .. })));
    }

    #[test]
    fn hand_written_single_synapse() {
        let text = "\
* one input, one output
SUBCKT L1 IN=1 OUT=1 ENC=PIXEL
XCELL 0 0 STATE=AP R=25464.790894703256
XCELL 0 1 STATE=P R=8488.263631567752
XCELL 0 2 STATE=P R=8488.263631567752
XCELL 0 3 STATE=AP R=8488.263631567752e0
XAMP 0 GAIN=1000
XNEURON 0 K=10 B=0.4
ENDS
";
        let err = parse_netlist(text).unwrap_err();
        assert!(matches!(err, Error::NetlistSyntax { line: 6, .. }), "{err}");
        let fixed = text.replace("STATE=AP R=8488.263631567752e0", "STATE=AP R=25464.79089");
        let net = parse_netlist(&fixed).unwrap();
        let p = net.parameters();
        assert_eq!(p.dims(), vec![1, 1]);
        assert_eq!(p.layers[0].weights.as_slice(), &[-1]);
        assert_eq!(p.layers[0].biases, vec![1]);
        assert_eq!(net.layer_gains(), vec![1000.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_netlist("FOO 1 2\n"), Err(Error::UnknownCard { line: 1, .. })));
        let bad_col = "SUBCKT L1 IN=1 OUT=1 ENC=PIXEL\nXAMP 0 GAIN=abc\n";
        match parse_netlist(bad_col) {
            Err(Error::NetlistSyntax { line, column, .. }) => assert_eq!((line, column), (2, 13)),
            other => panic!("{other:?}"),
        }
        let net = map_network(&random_params(&[3, 2, 2], 5), &MapOptions::default()).unwrap();
        let text = export_netlist(&net).unwrap();
        let dangling = text.replace("CONNECT L1 L2", "CONNECT L1 L3");
        assert!(matches!(parse_netlist(&dangling), Err(Error::DanglingNode { .. })));
        let missing = text.replace("CONNECT L1 L2\n", "");
        assert!(matches!(parse_netlist(&missing), Err(Error::DanglingNode { .. })));
        let illegal = text.replacen("XCELL 0 1 STATE=AP R=25464.790894703256", "XCELL 0 1 STATE=P R=8488.263631567752", 1);
        assert_ne!(illegal, text);
        assert!(matches!(parse_netlist(&illegal), Err(Error::NetlistSyntax { .. })));
    }
}
