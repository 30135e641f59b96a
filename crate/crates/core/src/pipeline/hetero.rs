//! End-to-end mixed-precision inference: full-precision convolutions on the
//! CPU, sign unit, transfer through the buffer, binarized FC layers on the
//! IMAC, ADC, and a digital argmax.

use rayon::prelude::*;

use super::adc::AdcMode;
use super::protocol::{trace_to_ops, Coprocessor, Output, TraceEvent, TransferProtocolState, Word, READY_ADDRESS, TRIT_CAPACITY};
use crate::circuits::{Fidelity, NeuronParams};
use crate::data::ImageSet;
use crate::error::{Error, Result};
use crate::network::{argmax, ImacNetwork};
use crate::oracle::ProtocolGrammar;
use crate::training::Cnn;

/// An IMAC network behind the transfer protocol. Inputs wider than the
/// buffer arrive over several fills; every fill but the last is latched
/// and acknowledged without outputs.
#[derive(Debug, Clone)]
pub struct ImacCoprocessor<'a> {
    network: &'a ImacNetwork,
    fidelity: Fidelity,
    adc: AdcMode,
    latency_cycles: u64,
    latched: Vec<i8>,
}

impl<'a> ImacCoprocessor<'a> {
    pub fn new(network: &'a ImacNetwork, fidelity: Fidelity, adc: AdcMode, latency_cycles: u64) -> Result<Self> {
        adc.validate()?;
        Ok(Self {
            network,
            fidelity,
            adc,
            latency_cycles,
            latched: Vec::with_capacity(network.input_dim()),
        })
    }
}

impl Coprocessor for ImacCoprocessor<'_> {
    fn timer_cycles(&self, trits: usize) -> u64 {
        if self.latched.len() + trits >= self.network.input_dim() {
            self.latency_cycles
        } else {
            1
        }
    }

    fn execute(&mut self, trits: &[i8]) -> Result<Vec<Output>> {
        self.latched.extend_from_slice(trits);
        let dim = self.network.input_dim();
        if self.latched.len() < dim {
            return Ok(Vec::new());
        }
        if self.latched.len() > dim {
            let got = self.latched.len();
            self.latched.clear();
            return Err(Error::Protocol(format!("received {got} inputs for a {dim}-input network")));
        }
        let x: Vec<f64> = self.latched.drain(..).map(f64::from).collect();
        let scores = self.network.infer_with(&x, self.fidelity)?.scores;
        let neuron = self.network.circuit().neuron;
        Ok(scores
            .into_iter()
            .map(|s| {
                let v = neuron.vss + s * neuron.swing();
                match self.adc {
                    AdcMode::Quantize(p) => Output::Code(p.quantize(v)),
                    AdcMode::Bypass => Output::Analog(v),
                }
            })
            .collect())
    }
}

/// Output voltages seen by the CPU for normalized neuron outputs `scores`:
/// bin centres when quantizing, the analog voltages in bypass.
pub fn read_out(neuron: &NeuronParams, adc: AdcMode, scores: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .map(|&s| {
            let v = neuron.vss + s * neuron.swing();
            match adc {
                AdcMode::Quantize(p) => p.dequantize(p.quantize(v)),
                AdcMode::Bypass => v,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub label: usize,
    /// Dequantized (or analog) output voltages.
    pub scores: Vec<f64>,
    pub trace: Vec<TraceEvent>,
    pub fills: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineEvaluation {
    pub samples: usize,
    pub accuracy: f64,
    /// Whether every trace was accepted by the protocol grammar.
    pub traces_legal: bool,
    pub cycles_per_inference: u64,
}

#[derive(Debug, Clone)]
pub struct HeteroPipeline {
    cnn: Cnn<f32>,
    network: ImacNetwork,
    adc: AdcMode,
    latency_cycles: u64,
}

impl HeteroPipeline {
    /// `latency_cycles` is the IMAC latency at the CPU clock, loaded into
    /// the timer on the final fill.
    pub fn new(cnn: Cnn<f32>, network: ImacNetwork, adc: AdcMode, latency_cycles: u64) -> Result<Self> {
        adc.validate()?;
        let width = cnn.spec().flatten_width()?;
        if width != network.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "convolutions produce {width} features, IMAC takes {}",
                network.input_dim()
            )));
        }
        if latency_cycles == 0 {
            return Err(Error::InvalidParameter("timer latency must be at least one cycle".into()));
        }
        Ok(Self {
            cnn,
            network,
            adc,
            latency_cycles,
        })
    }

    pub fn network(&self) -> &ImacNetwork {
        &self.network
    }

    pub fn cnn(&self) -> &Cnn<f32> {
        &self.cnn
    }

    pub fn run_inference(&self, image: &[f32]) -> Result<PipelineRun> {
        self.run_inference_with(image, self.network.circuit().fidelity)
    }

    pub fn run_inference_with(&self, image: &[f32], fidelity: Fidelity) -> Result<PipelineRun> {
        if image.len() != self.cnn.spec().input.len() {
            return Err(Error::DimensionMismatch(format!(
                "image has {} values, network takes {}",
                image.len(),
                self.cnn.spec().input.len()
            )));
        }
        let features = self.cnn.features(image);
        let device = ImacCoprocessor::new(&self.network, fidelity, self.adc, self.latency_cycles)?;
        let mut state = TransferProtocolState::new(device);
        let mut outputs = Vec::new();
        let chunks: Vec<&[f32]> = features.chunks(TRIT_CAPACITY).collect();
        for chunk in &chunks {
            state.store_imac(READY_ADDRESS, 0.0)?;
            for (k, &v) in chunk.iter().enumerate() {
                state.store_imac(k as u16 + 1, f64::from(v))?;
            }
            state.store_imac(READY_ADDRESS, 1.0)?;
            state.wait()?;
        }
        for a in 1..=self.network.output_dim() as u16 {
            match state.load_imac(a)? {
                Word::Output(Output::Code(c)) => match self.adc {
                    AdcMode::Quantize(p) => outputs.push(p.dequantize(c)),
                    AdcMode::Bypass => unreachable!("bypass produces analog outputs"),
                },
                Word::Output(Output::Analog(v)) => outputs.push(v),
                Word::Ready(_) => unreachable!("data address"),
            }
        }
        Ok(PipelineRun {
            label: argmax(&outputs),
            scores: outputs,
            trace: state.into_trace(),
            fills: chunks.len(),
        })
    }

    /// Accuracy over an image set, checking every protocol trace.
    pub fn evaluate(&self, set: &ImageSet) -> Result<PipelineEvaluation> {
        let grammar = ProtocolGrammar::new(TRIT_CAPACITY as u16, self.network.output_dim() as u16);
        let runs: Vec<(bool, bool, u64)> = (0..set.len())
            .into_par_iter()
            .map(|i| {
                let run = self.run_inference(set.image(i))?;
                let legal = grammar.accepts(&trace_to_ops(&run.trace));
                let cycles = run.trace.last().map_or(0, |e| e.cycle);
                Ok((run.label == set.label(i) as usize, legal, cycles))
            })
            .collect::<Result<_>>()?;
        let correct = runs.iter().filter(|r| r.0).count();
        Ok(PipelineEvaluation {
            samples: set.len(),
            accuracy: if set.is_empty() { 0.0 } else { correct as f64 / set.len() as f64 },
            traces_legal: runs.iter().all(|r| r.1),
            cycles_per_inference: runs.first().map_or(0, |r| r.2),
        })
    }
}
