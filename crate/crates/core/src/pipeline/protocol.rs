//! Transfer protocol between the CPU and the IMAC.
//!
//! Address 0 is the ready register; addresses 1..=256 are trit slots in a
//! 64-byte buffer (2 bits per trit). The CPU writes 0 to the register,
//! stores its inputs, writes 1 and loads the timer; when the timer expires
//! the IMAC has replaced the buffer contents with its outputs and set the
//! register to −1, after which the CPU loads results.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::ProtocolOp;

pub const BUFFER_BYTES: usize = 64;
pub const TRIT_CAPACITY: usize = BUFFER_BYTES * 4;
pub const READY_ADDRESS: u16 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Ready {
    Filling = 0,
    InputReady = 1,
    OutputReady = -1,
}

impl Ready {
    pub fn value(self) -> i8 {
        self as i8
    }
}

/// One IMAC output as held in the buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Output {
    /// ADC code, packed one per nibble.
    Code(u8),
    /// Unquantized neuron output voltage (ADC bypassed).
    Analog(f64),
}

/// Value returned by `load_imac`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Word {
    Ready(Ready),
    Output(Output),
}

/// The analog side of the protocol.
pub trait Coprocessor {
    /// Timer value, in CPU cycles, for a fill of `trits` inputs.
    fn timer_cycles(&self, trits: usize) -> u64;
    /// Consumes one fill. An empty result acknowledges a partial input
    /// that was latched for a later fill.
    fn execute(&mut self, trits: &[i8]) -> Result<Vec<Output>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StoreReady,
    StoreData,
    TimerLoad,
    Compute,
    LoadData,
    LoadReady,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEvent {
    pub event: EventKind,
    pub cycle: u64,
    pub address: u16,
    pub value: f64,
}

pub fn write_trace_csv(out: impl Write, trace: &[TraceEvent]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in trace {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// Abstract operation sequence of a trace, for checking against the
/// protocol grammar.
pub fn trace_to_ops(trace: &[TraceEvent]) -> Vec<ProtocolOp> {
    trace
        .iter()
        .filter_map(|e| match e.event {
            EventKind::StoreReady => Some(ProtocolOp::SetReady(e.value as i8)),
            EventKind::StoreData => Some(ProtocolOp::StoreData(e.address)),
            EventKind::TimerLoad => None,
            EventKind::Compute => Some(ProtocolOp::Compute),
            EventKind::LoadData => Some(ProtocolOp::LoadData(e.address)),
            EventKind::LoadReady => Some(ProtocolOp::LoadReady),
        })
        .collect()
}

fn encode_trit(t: i8) -> u8 {
    match t {
        1 => 0b01,
        -1 => 0b11,
        _ => 0b00,
    }
}

fn decode_trit(bits: u8) -> i8 {
    match bits & 0b11 {
        0b01 => 1,
        0b11 => -1,
        _ => 0,
    }
}

/// Buffer, ready register and timer of one co-processor instance.
#[derive(Debug, Clone)]
pub struct TransferProtocolState<C> {
    ready: Ready,
    buffer: [u8; BUFFER_BYTES],
    /// Highest slot written during the current fill.
    filled: usize,
    outputs: Vec<Output>,
    outputs_valid: bool,
    timer: u64,
    cycle: u64,
    trace: Vec<TraceEvent>,
    device: C,
}

impl<C: Coprocessor> TransferProtocolState<C> {
    /// Starts idle: the register reads −1 and no outputs are available.
    pub fn new(device: C) -> Self {
        Self {
            ready: Ready::OutputReady,
            buffer: [0; BUFFER_BYTES],
            filled: 0,
            outputs: Vec::new(),
            outputs_valid: false,
            timer: 0,
            cycle: 0,
            trace: Vec::new(),
            device,
        }
    }

    pub fn ready(&self) -> Ready {
        self.ready
    }

    pub fn timer(&self) -> u64 {
        self.timer
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn buffer(&self) -> &[u8; BUFFER_BYTES] {
        &self.buffer
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn into_trace(self) -> Vec<TraceEvent> {
        self.trace
    }

    pub fn device(&self) -> &C {
        &self.device
    }

    fn record(&mut self, event: EventKind, address: u16, value: f64) {
        self.trace.push(TraceEvent {
            event,
            cycle: self.cycle,
            address,
            value,
        });
    }

    fn violation(&self, what: &str) -> Error {
        Error::Protocol(format!("{what} while ready register is {}", self.ready.value()))
    }

    /// Trit stored at 1-based slot `address`.
    pub fn trit(&self, address: u16) -> i8 {
        let i = usize::from(address) - 1;
        decode_trit(self.buffer[i / 4] >> (2 * (i % 4)))
    }

    /// CPU store. Address 0 writes the ready register (0 or 1); other
    /// addresses store the sign of `value` into a trit slot.
    pub fn store_imac(&mut self, address: u16, value: f64) -> Result<()> {
        self.cycle += 1;
        if address == READY_ADDRESS {
            match (value, self.ready) {
                (v, Ready::OutputReady) if v == 0.0 => {
                    self.buffer = [0; BUFFER_BYTES];
                    self.filled = 0;
                    self.outputs.clear();
                    self.outputs_valid = false;
                    self.ready = Ready::Filling;
                    self.record(EventKind::StoreReady, address, 0.0);
                }
                (v, Ready::Filling) if v == 1.0 => {
                    self.ready = Ready::InputReady;
                    self.record(EventKind::StoreReady, address, 1.0);
                    self.timer = self.device.timer_cycles(self.filled);
                    self.record(EventKind::TimerLoad, address, self.timer as f64);
                }
                (v, _) if v == 0.0 || v == 1.0 => return Err(self.violation(&format!("writing {v} to the register"))),
                (v, _) => return Err(Error::Protocol(format!("ready register cannot be set to {v}"))),
            }
            return Ok(());
        }
        let slot = usize::from(address);
        if slot > TRIT_CAPACITY {
            return Err(Error::BufferOverflow {
                address,
                capacity: TRIT_CAPACITY,
            });
        }
        if self.ready != Ready::Filling {
            return Err(self.violation("data store"));
        }
        let trit = crate::training::sign_unit(&[value])[0];
        let (byte, shift) = ((slot - 1) / 4, 2 * ((slot - 1) % 4));
        self.buffer[byte] = (self.buffer[byte] & !(0b11 << shift)) | (encode_trit(trit) << shift);
        self.filled = self.filled.max(slot);
        self.record(EventKind::StoreData, address, f64::from(trit));
        Ok(())
    }

    /// Advances the clock; the IMAC completes when the timer reaches zero.
    pub fn tick(&mut self, cycles: u64) -> Result<()> {
        self.cycle += cycles;
        if self.ready == Ready::InputReady {
            self.timer = self.timer.saturating_sub(cycles);
            if self.timer == 0 {
                self.complete()?;
            }
        }
        Ok(())
    }

    /// CPU idles until the timer expires.
    pub fn wait(&mut self) -> Result<()> {
        if self.ready != Ready::InputReady {
            return Err(self.violation("waiting for the IMAC"));
        }
        let remaining = self.timer;
        self.tick(remaining)
    }

    fn complete(&mut self) -> Result<()> {
        let trits: Vec<i8> = (1..=self.filled as u16).map(|a| self.trit(a)).collect();
        let outputs = self.device.execute(&trits)?;
        let codes = outputs.iter().filter(|o| matches!(o, Output::Code(_))).count();
        if codes > BUFFER_BYTES * 2 {
            return Err(Error::BufferOverflow {
                address: codes as u16,
                capacity: BUFFER_BYTES * 2,
            });
        }
        self.buffer = [0; BUFFER_BYTES];
        for (i, o) in outputs.iter().enumerate() {
            if let Output::Code(c) = *o {
                self.buffer[i / 2] |= (c & 0x0f) << (4 * (i % 2));
            }
        }
        self.outputs = outputs;
        self.outputs_valid = true;
        self.ready = Ready::OutputReady;
        self.record(EventKind::Compute, 0, self.outputs.len() as f64);
        Ok(())
    }

    /// CPU load. Address 0 reads the ready register at any time; output
    /// slots are readable only after a completed computation.
    pub fn load_imac(&mut self, address: u16) -> Result<Word> {
        self.cycle += 1;
        if address == READY_ADDRESS {
            self.record(EventKind::LoadReady, address, f64::from(self.ready.value()));
            return Ok(Word::Ready(self.ready));
        }
        if self.ready != Ready::OutputReady || !self.outputs_valid {
            return Err(self.violation("data load"));
        }
        let slot = usize::from(address);
        let Some(&out) = self.outputs.get(slot - 1) else {
            return Err(Error::Protocol(format!(
                "no output at address {address}; {} available",
                self.outputs.len()
            )));
        };
        let word = match out {
            Output::Code(_) => Output::Code((self.buffer[(slot - 1) / 2] >> (4 * ((slot - 1) % 2))) & 0x0f),
            analog => analog,
        };
        let value = match word {
            Output::Code(c) => f64::from(c),
            Output::Analog(v) => v,
        };
        self.record(EventKind::LoadData, address, value);
        Ok(Word::Output(word))
    }

    /// Applies an abstract protocol operation. Data stores write +1.
    pub fn apply(&mut self, op: ProtocolOp) -> Result<()> {
        match op {
            ProtocolOp::StoreData(READY_ADDRESS) | ProtocolOp::LoadData(READY_ADDRESS) => {
                Err(Error::Protocol("address 0 is the ready register, not a data slot".into()))
            }
            ProtocolOp::SetReady(v) => self.store_imac(READY_ADDRESS, f64::from(v)),
            ProtocolOp::StoreData(a) => self.store_imac(a, 1.0),
            ProtocolOp::Compute => self.wait(),
            ProtocolOp::LoadData(a) => self.load_imac(a).map(|_| ()),
            ProtocolOp::LoadReady => self.load_imac(READY_ADDRESS).map(|_| ()),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::oracle::ProtocolGrammar;
    use crate::selftest::{machine_accepts, random_legal_ops, random_op, EchoDevice};

    #[test]
    fn full_round() {
        let mut p = TransferProtocolState::new(EchoDevice { outputs: 3, latency: 37 });
        assert_eq!(p.load_imac(0).unwrap(), Word::Ready(Ready::OutputReady));
        p.store_imac(0, 0.0).unwrap();
        assert_eq!(p.ready(), Ready::Filling);
        p.store_imac(1, 7.1).unwrap();
        p.store_imac(2, -0.5).unwrap();
        p.store_imac(4, 2.0).unwrap();
        assert_eq!((p.trit(1), p.trit(2), p.trit(3), p.trit(4)), (1, -1, 0, 1));
        assert_eq!(p.buffer()[0], 0b01_00_11_01);
        assert!(p.load_imac(1).is_err());
        p.store_imac(0, 1.0).unwrap();
        assert_eq!(p.ready(), Ready::InputReady);
        assert_eq!(p.timer(), 37);
        assert!(p.store_imac(3, 1.0).is_err());
        p.tick(36).unwrap();
        assert_eq!(p.ready(), Ready::InputReady);
        p.tick(1).unwrap();
        assert_eq!(p.ready(), Ready::OutputReady);
        assert_eq!(p.load_imac(1).unwrap(), Word::Output(Output::Code(1)));
        assert_eq!(p.load_imac(3).unwrap(), Word::Output(Output::Code(3)));
        assert!(p.load_imac(4).is_err());
        assert_eq!(p.load_imac(0).unwrap(), Word::Ready(Ready::OutputReady));
        assert!(p.store_imac(1, 1.0).is_err());

        let ops = trace_to_ops(p.trace());
        assert!(ProtocolGrammar::new(256, 3).accepts(&ops));
        let mut csv = Vec::new();
        write_trace_csv(&mut csv, p.trace()).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("event,cycle,address,value\nload_ready,1,0,-1"), "{text}");
    }

    #[test]
    fn capacity_and_register_errors() {
        let mut p = TransferProtocolState::new(EchoDevice { outputs: 1, latency: 37 });
        p.store_imac(0, 0.0).unwrap();
        for a in 1..=256 {
            p.store_imac(a, 1.0).unwrap();
        }
        assert!(matches!(
            p.store_imac(257, 1.0),
            Err(Error::BufferOverflow { address: 257, capacity: 256 })
        ));
        assert!(matches!(p.store_imac(0, -1.0), Err(Error::Protocol(_))));
        assert!(matches!(p.store_imac(0, 0.0), Err(Error::Protocol(_))));
        assert!(p.wait().is_err());
        p.store_imac(0, 1.0).unwrap();
        p.wait().unwrap();
        assert_eq!(p.buffer()[0], 0); // 256 mod 8
    }

    #[test]
    fn agrees_with_grammar_on_mutations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let g = ProtocolGrammar::new(TRIT_CAPACITY as u16, 4);
        for _ in 0..500 {
            let mut ops = random_legal_ops(&mut rng, TRIT_CAPACITY as u16, 4);
            assert!(g.accepts(&ops));
            assert!(machine_accepts(&ops, 4), "{ops:?}");
            let at = rng.gen_range(0..=ops.len());
            ops.insert(at, random_op(&mut rng, TRIT_CAPACITY as u16, 4));
            assert_eq!(machine_accepts(&ops, 4), g.accepts(&ops), "{ops:?}");
        }
    }

    proptest! {
        #[test]
        fn arbitrary_sequences_match_grammar(codes in proptest::collection::vec((0u8..5, 0u16..10), 0..12)) {
            let ops: Vec<ProtocolOp> = codes
                .into_iter()
                .map(|(k, a)| match k {
                    0 => ProtocolOp::SetReady((a % 3) as i8 - 1),
                    1 => ProtocolOp::StoreData(a.max(1) * 40),
                    2 => ProtocolOp::Compute,
                    3 => ProtocolOp::LoadData(a.max(1)),
                    _ => ProtocolOp::LoadReady,
                })
                .collect();
            let g = ProtocolGrammar::new(TRIT_CAPACITY as u16, 3);
            prop_assert_eq!(machine_accepts(&ops, 3), g.accepts(&ops));
        }
    }
}
